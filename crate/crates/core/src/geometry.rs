//! Planar geometry in meters (x east, y north).

use serde::{Deserialize, Serialize};

/// Tolerance for on-boundary tests, in meters.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("polygon needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("buffer radius must be non-negative, got {0}")]
    NegativeRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Point { x, y })
    }
}

/// A simple polygon stored without the repeated closing vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl TryFrom<Vec<Point>> for Polygon {
    type Error = GeometryError;

    fn try_from(v: Vec<Point>) -> Result<Self, Self::Error> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<Point> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

impl Polygon {
    pub fn new(mut vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        let poly = Polygon { vertices };
        if poly.area() <= 0.0 {
            return Err(GeometryError::ZeroArea);
        }
        Ok(poly)
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        Polygon::new(vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>() / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point {
        let a = self.signed_area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let cross = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * cross;
            cy += (p.y + q.y) * cross;
        }
        Point::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    /// (min, max) corners.
    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        Polygon { vertices: self.vertices.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect() }
    }
}

pub fn dist_point_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

fn on_boundary(p: Point, poly: &Polygon) -> bool {
    poly.edges().any(|(a, b)| dist_point_segment(p, a, b) <= BOUNDARY_EPS)
}

/// Even-odd rule; points on the boundary count as inside.
pub fn point_in_polygon(p: Point, poly: &Polygon) -> bool {
    if on_boundary(p, poly) {
        return true;
    }
    let mut inside = false;
    for (a, b) in poly.edges() {
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// 0 inside or on the boundary, otherwise the distance to the nearest edge.
pub fn dist_point_polygon(p: Point, poly: &Polygon) -> f64 {
    if point_in_polygon(p, poly) {
        return 0.0;
    }
    poly.edges().map(|(a, b)| dist_point_segment(p, a, b)).fold(f64::INFINITY, f64::min)
}

/// Inclusive: `true` iff the distance to the polygon is at most `radius`.
pub fn within_buffer(p: Point, poly: &Polygon, radius: f64) -> Result<bool, GeometryError> {
    if radius.is_nan() || radius < 0.0 {
        return Err(GeometryError::NegativeRadius(radius));
    }
    Ok(dist_point_polygon(p, poly) <= radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(h: f64) -> Polygon {
        Polygon::rect(-h, -h, h, h).unwrap()
    }

    #[test]
    fn interior_point_is_at_zero() {
        assert_eq!(dist_point_polygon(Point::new(0.0, 0.0), &square(0.5)), 0.0);
    }

    #[test]
    fn axis_aligned_offset() {
        assert_eq!(dist_point_polygon(Point::new(10.0, 0.0), &square(1.0)), 9.0);
    }

    #[test]
    fn corner_distance() {
        let d = dist_point_polygon(Point::new(4.0, 5.0), &square(1.0));
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_polygons_rejected() {
        let p = |x, y| Point::new(x, y);
        assert_eq!(Polygon::new(vec![p(0.0, 0.0), p(1.0, 0.0)]), Err(GeometryError::TooFewVertices(2)));
        assert_eq!(Polygon::new(vec![p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0)]), Err(GeometryError::ZeroArea));
        assert_eq!(
            Polygon::new(vec![p(0.0, 0.0), p(1.0, 0.0), p(0.0, 1.0), p(0.0, 0.0)]).unwrap().vertices().len(),
            3
        );
        assert_eq!(Polygon::new(vec![p(f64::NAN, 0.0), p(1.0, 0.0), p(0.0, 1.0)]), Err(GeometryError::NonFinite));
    }

    #[test]
    fn buffer_is_inclusive() {
        let sq = Polygon::rect(0.0, 0.0, 10.0, 10.0).unwrap();
        assert!(within_buffer(Point::new(260.0, 5.0), &sq, 300.0).unwrap());
        assert!(within_buffer(Point::new(310.0, 5.0), &sq, 300.0).unwrap());
        assert!(!within_buffer(Point::new(311.0, 5.0), &sq, 300.0).unwrap());
        assert!(matches!(within_buffer(Point::new(0.0, 0.0), &sq, -1.0), Err(GeometryError::NegativeRadius(_))));
    }

    #[test]
    fn boundary_counts_as_inside() {
        let sq = square(1.0);
        assert!(point_in_polygon(Point::new(1.0, 0.3), &sq));
        assert!(point_in_polygon(Point::new(-1.0, -1.0), &sq));
        assert!(!point_in_polygon(Point::new(5.0, 5.0), &sq));
    }

    #[test]
    fn concave_polygon_notch() {
        // U shape: notch between x in (1,2), y > 1
        let u = Polygon::new(
            [(0.0, 0.0), (3.0, 0.0), (3.0, 3.0), (2.0, 3.0), (2.0, 1.0), (1.0, 1.0), (1.0, 3.0), (0.0, 3.0)]
                .iter()
                .map(|&(x, y)| Point::new(x, y))
                .collect(),
        )
        .unwrap();
        assert!(!point_in_polygon(Point::new(1.5, 2.0), &u));
        assert!((dist_point_polygon(Point::new(1.5, 2.0), &u) - 0.5).abs() < 1e-12);
        assert!(point_in_polygon(Point::new(0.5, 2.0), &u));
        assert_eq!(u.area(), 7.0);
    }

    #[test]
    fn centroid_of_rectangle() {
        let r = Polygon::rect(2.0, 4.0, 6.0, 10.0).unwrap();
        let c = r.centroid();
        assert!((c.x - 4.0).abs() < 1e-12 && (c.y - 7.0).abs() < 1e-12);
    }

    fn rotate(p: Point, theta: f64) -> Point {
        let (s, c) = theta.sin_cos();
        Point::new(c * p.x - s * p.y, s * p.x + c * p.y)
    }

    fn arb_convex() -> impl Strategy<Value = Polygon> {
        (3usize..9, 1.0f64..50.0, proptest::collection::vec(0.0f64..1.0, 9)).prop_map(|(n, r, jitter)| {
            let mut angles: Vec<f64> = (0..n).map(|i| (i as f64 + 0.8 * jitter[i]) / n as f64).collect();
            angles.sort_by(f64::total_cmp);
            Polygon::new(
                angles
                    .iter()
                    .map(|a| Point::new(r * (a * std::f64::consts::TAU).cos(), r * (a * std::f64::consts::TAU).sin()))
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn distance_is_rigid_motion_invariant(
            poly in arb_convex(),
            px in -200.0f64..200.0, py in -200.0f64..200.0,
            dx in -1e4f64..1e4, dy in -1e4f64..1e4, theta in 0.0f64..std::f64::consts::TAU,
        ) {
            let p = Point::new(px, py);
            let base = dist_point_polygon(p, &poly);
            let moved = poly.translated(dx, dy);
            let shifted = dist_point_polygon(Point::new(px + dx, py + dy), &moved);
            prop_assert!((base - shifted).abs() <= 1e-9);
            let rot = Polygon::new(poly.vertices().iter().map(|&v| rotate(v, theta)).collect()).unwrap();
            let rotated = dist_point_polygon(rotate(p, theta), &rot);
            prop_assert!((base - rotated).abs() <= 1e-9);
        }

        #[test]
        fn zero_distance_iff_inside(poly in arb_convex(), px in -80.0f64..80.0, py in -80.0f64..80.0) {
            let p = Point::new(px, py);
            let d = dist_point_polygon(p, &poly);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d == 0.0, point_in_polygon(p, &poly));
        }

        #[test]
        fn buffers_are_nested(poly in arb_convex(), px in -300.0f64..300.0, py in -300.0f64..300.0,
                              r1 in 0.0f64..200.0, extra in 0.0f64..200.0) {
            let p = Point::new(px, py);
            if within_buffer(p, &poly, r1).unwrap() {
                prop_assert!(within_buffer(p, &poly, r1 + extra).unwrap());
            }
        }
    }
}
