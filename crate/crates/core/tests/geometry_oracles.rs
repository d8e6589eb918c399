use agora_core::geometry::{dist_point_polygon, point_in_polygon, within_buffer, Point, Polygon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Star-shaped simple polygon: sorted angles, random radii.
fn random_polygon(rng: &mut ChaCha8Rng) -> Polygon {
    let n = rng.random_range(3..=12);
    let (cx, cy) = (rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    if angles.len() < 3 {
        angles = vec![0.0, 2.0, 4.0];
    }
    let pts = angles
        .iter()
        .map(|a| {
            let r = rng.random_range(20.0..200.0);
            Point::new(cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    Polygon::new(pts).unwrap()
}

fn is_left(a: Point, b: Point, p: Point) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)
}

fn winding_number(p: Point, v: &[Point]) -> i32 {
    let mut wn = 0;
    for i in 0..v.len() {
        let (a, b) = (v[i], v[(i + 1) % v.len()]);
        if a.y <= p.y {
            if b.y > p.y && is_left(a, b, p) > 0.0 {
                wn += 1;
            }
        } else if b.y <= p.y && is_left(a, b, p) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

fn seg_dist(p: Point, a: Point, b: Point, t: f64) -> f64 {
    let q = Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
    ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
}

/// Closed-form projection test, used only to skip ambiguous points.
fn near_boundary(p: Point, v: &[Point]) -> bool {
    (0..v.len()).any(|i| {
        let (a, b) = (v[i], v[(i + 1) % v.len()]);
        let len2 = (b.x - a.x).powi(2) + (b.y - a.y).powi(2);
        let t = (((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / len2).clamp(0.0, 1.0);
        seg_dist(p, a, b, t) < 1e-6
    })
}

/// Dense boundary sampling (10^5 points split by edge length), then each
/// edge's best sample is refined by ternary search on its convex distance
/// profile.
fn sampled_distance(p: Point, v: &[Point]) -> f64 {
    const SAMPLES: f64 = 1e5;
    let edges: Vec<(Point, Point)> = (0..v.len()).map(|i| (v[i], v[(i + 1) % v.len()])).collect();
    let perimeter: f64 = edges.iter().map(|(a, b)| a.dist(*b)).sum();
    let mut best = f64::INFINITY;
    for &(a, b) in &edges {
        let k = ((a.dist(b) / perimeter * SAMPLES).ceil() as usize).max(2);
        let (mut bi, mut bd) = (0, f64::INFINITY);
        for i in 0..=k {
            let d = seg_dist(p, a, b, i as f64 / k as f64);
            if d < bd {
                (bi, bd) = (i, d);
            }
        }
        let (mut lo, mut hi) = ((bi.saturating_sub(1)) as f64 / k as f64, ((bi + 1).min(k)) as f64 / k as f64);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if seg_dist(p, a, b, m1) <= seg_dist(p, a, b, m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best = best.min(bd).min(seg_dist(p, a, b, (lo + hi) / 2.0));
    }
    best
}

#[test]
fn point_in_polygon_agrees_with_winding_number() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 10_000 {
        let poly = random_polygon(&mut rng);
        let ((x0, y0), (x1, y1)) = {
            let (lo, hi) = poly.bbox();
            ((lo.x - 50.0, lo.y - 50.0), (hi.x + 50.0, hi.y + 50.0))
        };
        for _ in 0..100 {
            let p = Point::new(rng.random_range(x0..x1), rng.random_range(y0..y1));
            if near_boundary(p, poly.vertices()) {
                continue;
            }
            assert_eq!(point_in_polygon(p, &poly), winding_number(p, poly.vertices()) != 0, "{p:?} {poly:?}");
            checked += 1;
        }
    }
}

#[test]
fn distance_matches_boundary_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let poly = random_polygon(&mut rng);
        let p = Point::new(rng.random_range(-900.0..900.0), rng.random_range(-900.0..900.0));
        let inside = winding_number(p, poly.vertices()) != 0;
        let expected = if inside { 0.0 } else { sampled_distance(p, poly.vertices()) };
        let got = dist_point_polygon(p, &poly);
        assert!((got - expected).abs() <= 1e-6, "{got} vs {expected}");
    }
}

#[test]
fn buffer_edges() {
    let sq = Polygon::rect(-1.0, -1.0, 1.0, 1.0).unwrap();
    assert_eq!(dist_point_polygon(Point::new(10.0, 0.0), &sq), 9.0);
    assert!(within_buffer(Point::new(251.0, 0.0), &sq, 300.0).unwrap());
    assert!(within_buffer(Point::new(301.0, 0.0), &sq, 300.0).unwrap());
    assert!(!within_buffer(Point::new(302.0, 0.0), &sq, 300.0).unwrap());
    assert!(within_buffer(Point::new(0.0, 0.0), &sq, -1.0).is_err());
}
