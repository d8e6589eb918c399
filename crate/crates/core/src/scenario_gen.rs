//! Synthetic community scenarios on a perturbed grid split by two arterial
//! roads, plus SVG and GeoJSON rendering.

use crate::domain::{Constraints, DomainError, LandUse, Plan, Plot, PlotId, PlotStatus, Scenario, ScenarioMetadata};
use crate::geometry::{Point, Polygon};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeSet;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub name: String,
    pub area_km2: f64,
    pub rows: usize,
    pub cols: usize,
    pub vacant: usize,
    /// Fixed green plots among the non-vacant ones; the rest are residential.
    pub retained_green: usize,
    pub constraints: Constraints,
    /// Width of each arterial gap (meters).
    pub arterial_width_m: f64,
    /// Setback between neighbouring plots (meters).
    pub street_width_m: f64,
    /// Maximum vertex displacement as a fraction of the grid pitch.
    pub jitter: f64,
    /// Reference demographics carried into the scenario metadata.
    pub residents: Option<u64>,
    pub elderly_share: Option<f64>,
    pub bachelor_share: Option<f64>,
}

fn community_constraints(office: u32, hospital: u32) -> Constraints {
    use LandUse::*;
    Constraints {
        min_count: [(School, 6), (Recreation, 6), (Business, 4), (Clinic, 4), (Park, 1), (Office, office), (Hospital, hospital)]
            .into_iter()
            .collect(),
        ..Constraints::default()
    }
}

impl ScenarioTemplate {
    /// 3.74 km², 63 plots of which 42 vacant.
    pub fn hlg() -> Self {
        Self {
            name: "hlg".into(),
            area_km2: 3.74,
            rows: 7,
            cols: 9,
            vacant: 42,
            retained_green: 2,
            constraints: community_constraints(6, 2),
            arterial_width_m: 40.0,
            street_width_m: 16.0,
            jitter: 0.15,
            residents: Some(114_500),
            elderly_share: Some(0.1638),
            bachelor_share: Some(0.4888),
        }
    }

    /// 5.17 km², 70 plots of which 42 vacant.
    pub fn dhm() -> Self {
        Self {
            name: "dhm".into(),
            area_km2: 5.17,
            rows: 7,
            cols: 10,
            vacant: 42,
            retained_green: 3,
            constraints: community_constraints(2, 1),
            residents: Some(92_300),
            elderly_share: Some(0.2423),
            bachelor_share: Some(0.3154),
            ..Self::hlg()
        }
    }

    /// All-vacant grid of 200 m cells without minimums.
    pub fn grid(rows: usize, cols: usize) -> Self {
        Self {
            name: "grid".into(),
            area_km2: (rows * cols) as f64 * 0.04,
            rows,
            cols,
            vacant: rows * cols,
            retained_green: 0,
            constraints: Constraints::default(),
            arterial_width_m: 0.0,
            street_width_m: 10.0,
            jitter: 0.0,
            residents: None,
            elderly_share: None,
            bachelor_share: None,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "hlg" => Some(Self::hlg()),
            "dhm" => Some(Self::dhm()),
            "grid" => Some(Self::grid(3, 3)),
            _ => None,
        }
    }

    pub fn total(&self) -> usize {
        self.rows * self.cols
    }

    fn check(&self) -> Result<(), DomainError> {
        let bad = |m: String| Err(DomainError::BadTemplate(m));
        if self.rows == 0 || self.cols == 0 {
            return bad("template needs at least one row and one column".into());
        }
        if self.vacant > self.total() {
            return bad(format!("{} vacant plots requested but only {} plots", self.vacant, self.total()));
        }
        if self.retained_green > self.total() - self.vacant {
            return bad("more retained green plots than non-vacant plots".into());
        }
        if self.area_km2.is_nan() || self.area_km2 <= 0.0 || !(0.0..0.5).contains(&self.jitter) {
            return bad("area must be positive and jitter below half a pitch".into());
        }
        Ok(())
    }
}

struct Layout {
    px: f64,
    py: f64,
    split_c: usize,
    split_r: usize,
    road: f64,
}

impl Layout {
    fn x(&self, i: usize) -> (f64, f64) {
        // west and east coordinate of vertical grid line i
        let base = i as f64 * self.px;
        if i < self.split_c || self.split_c == 0 {
            (base, base)
        } else if i == self.split_c {
            (base, base + self.road)
        } else {
            (base + self.road, base + self.road)
        }
    }

    fn y(&self, j: usize) -> (f64, f64) {
        let base = j as f64 * self.py;
        if j < self.split_r || self.split_r == 0 {
            (base, base)
        } else if j == self.split_r {
            (base, base + self.road)
        } else {
            (base + self.road, base + self.road)
        }
    }
}

/// Sub-community of a cell: 1 = NW, 2 = NE, 3 = SW, 4 = SE; rows count
/// from the south.
fn quadrant(row: usize, col: usize, split_r: usize, split_c: usize) -> u32 {
    let east = split_c > 0 && col >= split_c;
    let north = split_r > 0 && row >= split_r;
    match (north, east) {
        (true, false) => 1,
        (true, true) => 2,
        (false, false) => 3,
        (false, true) => 4,
    }
}

fn shrink(vertices: [Point; 4], by: f64) -> Vec<Point> {
    let c = Point::new(vertices.iter().map(|p| p.x).sum::<f64>() / 4.0, vertices.iter().map(|p| p.y).sum::<f64>() / 4.0);
    vertices
        .iter()
        .map(|v| {
            let d = v.dist(c);
            let t = if d > 0.0 { (by / d).min(0.45) } else { 0.0 };
            Point::new(v.x + (c.x - v.x) * t, v.y + (c.y - v.y) * t)
        })
        .collect()
}

pub fn generate(template: &ScenarioTemplate, seed: u64) -> Result<Scenario, DomainError> {
    template.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (template.rows, template.cols);
    let split_c = if cols >= 2 { cols / 2 } else { 0 };
    let split_r = if rows >= 2 { rows / 2 } else { 0 };
    let has_quadrants = split_c > 0 && split_r > 0;
    let road = if has_quadrants { template.arterial_width_m } else { 0.0 };

    // rectangle with cell aspect close to 1 and the requested area
    let area = template.area_km2 * 1e6;
    let aspect = cols as f64 / rows as f64;
    let height = (area / aspect).sqrt();
    let width = area / height;
    let layout = Layout {
        px: (width - if split_c > 0 { road } else { 0.0 }) / cols as f64,
        py: (height - if split_r > 0 { road } else { 0.0 }) / rows as f64,
        split_c: if has_quadrants { split_c } else { 0 },
        split_r: if has_quadrants { split_r } else { 0 },
        road,
    };

    // Jitter grid vertices that are not on the outer boundary or an arterial.
    let mut jit = vec![vec![(0.0, 0.0); cols + 1]; rows + 1];
    for (j, row) in jit.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let fixed_x = i == 0 || i == cols || (has_quadrants && i == split_c);
            let fixed_y = j == 0 || j == rows || (has_quadrants && j == split_r);
            let jx = if fixed_x { 0.0 } else { rng.random_range(-1.0..=1.0) * template.jitter * layout.px };
            let jy = if fixed_y { 0.0 } else { rng.random_range(-1.0..=1.0) * template.jitter * layout.py };
            *v = (jx, jy);
        }
    }
    let corner = |i: usize, j: usize, east_side: bool, north_side: bool| {
        let (xw, xe) = layout.x(i);
        let (ys, yn) = layout.y(j);
        let (dx, dy) = jit[j][i];
        Point::new(if east_side { xe } else { xw } + dx, if north_side { yn } else { ys } + dy)
    };

    let mut cells = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            // a cell uses the east side of its west line and the west side of its east line
            let quad = [corner(c, r, true, true), corner(c + 1, r, false, true), corner(c + 1, r + 1, false, false), corner(c, r + 1, true, false)];
            let polygon = Polygon::new(shrink(quad, template.street_width_m / 2.0 * std::f64::consts::SQRT_2))
                .map_err(|e| DomainError::BadTemplate(format!("degenerate plot: {e}")))?;
            let sub = if has_quadrants { quadrant(r, c, split_r, split_c) } else { 1 };
            cells.push((r, c, sub, polygon));
        }
    }
    // ids run west to east, north to south
    cells.sort_by_key(|&(r, c, _, _)| (std::cmp::Reverse(r), c));

    // Non-vacant plots are spread over the sub-communities in proportion to size.
    let n_sub = if has_quadrants { 4 } else { 1 };
    let n_fixed = template.total() - template.vacant;
    let members: Vec<Vec<usize>> = (1..=n_sub).map(|q| (0..cells.len()).filter(|&k| cells[k].2 == q).collect()).collect();
    let mut quota: Vec<usize> = members.iter().map(|m| m.len() * n_fixed / cells.len()).collect();
    let mut order: Vec<usize> = (0..n_sub as usize).collect();
    order.sort_by_key(|&q| (std::cmp::Reverse((members[q].len() * n_fixed) % cells.len()), q));
    let mut left = n_fixed - quota.iter().sum::<usize>();
    for &q in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quota[q] < members[q].len() {
            quota[q] += 1;
            left -= 1;
        }
    }
    let mut status = vec![PlotStatus::Vacant; cells.len()];
    let mut greenable = Vec::new();
    for (q, m) in members.iter().enumerate() {
        let mut picks = m.clone();
        picks.shuffle(&mut rng);
        for (n, &k) in picks.iter().take(quota[q]).enumerate() {
            status[k] = PlotStatus::Fixed(LandUse::Residential);
            // keep the first residential plot of each sub-community
            if n > 0 {
                greenable.push(k);
            }
        }
    }
    greenable.sort_unstable();
    greenable.shuffle(&mut rng);
    for &k in greenable.iter().take(template.retained_green) {
        status[k] = PlotStatus::Fixed(LandUse::RetainedGreen);
    }

    let center = Point::new(layout.x(layout.split_c).0 + road / 2.0, layout.y(layout.split_r).0 + road / 2.0);
    let center = if has_quadrants { center } else { Point::new(width / 2.0, height / 2.0) };
    let grid_pos: Vec<(usize, usize)> = cells.iter().map(|&(r, c, _, _)| (r, c)).collect();
    let mut plots: Vec<Plot> = cells
        .into_iter()
        .enumerate()
        .map(|(id, (_, _, sub, polygon))| Plot { id, polygon, status: status[id], sub_community: sub, description: String::new() })
        .collect();
    for id in 0..plots.len() {
        plots[id].description = describe(&plots, &grid_pos, id, center, has_quadrants);
    }

    let scenario = Scenario {
        name: template.name.clone(),
        center,
        n_sub_communities: n_sub,
        constraints: template.constraints.clone(),
        plots,
        metadata: ScenarioMetadata {
            area_km2: template.area_km2,
            template: Some(template.name.clone()),
            seed: Some(seed),
            residents: template.residents,
            elderly_share: template.elderly_share,
            bachelor_share: template.bachelor_share,
        },
    };
    scenario.validate()?;
    Ok(scenario)
}

fn describe(plots: &[Plot], grid: &[(usize, usize)], id: PlotId, center: Point, arterials: bool) -> String {
    let c = plots[id].polygon.centroid();
    let (r, col) = grid[id];
    let mut s = format!("{:.0} m from the community center", c.dist(center));
    if arterials {
        let (dx, dy) = ((c.x - center.x).abs(), (c.y - center.y).abs());
        let (road, d) = if dx <= dy { ("north-south", dx) } else { ("east-west", dy) };
        let _ = write!(s, "; {d:.0} m from the {road} arterial");
    }
    let mut neighbours: Vec<String> = grid
        .iter()
        .enumerate()
        .filter(|(_, &(rr, cc))| rr.abs_diff(r) + cc.abs_diff(col) == 1)
        .map(|(k, _)| {
            let what = plots[k].fixed_use().map_or("vacant", |u| u.label());
            format!("{k} ({what})")
        })
        .collect();
    neighbours.sort();
    if !neighbours.is_empty() {
        let _ = write!(s, "; next to plots {}", neighbours.join(", "));
    }
    s
}

pub fn palette(u: Option<LandUse>) -> &'static str {
    match u {
        Some(LandUse::School) => "#4e79a7",
        Some(LandUse::Hospital) => "#e15759",
        Some(LandUse::Clinic) => "#ff9da7",
        Some(LandUse::Business) => "#f28e2b",
        Some(LandUse::Office) => "#76b7b2",
        Some(LandUse::Recreation) => "#edc948",
        Some(LandUse::Park) => "#59a14f",
        Some(LandUse::GreenSpace) => "#8cd17d",
        Some(LandUse::Residential) => "#bab0ac",
        Some(LandUse::RetainedGreen) => "#2e6b30",
        None => "#ffffff",
    }
}

/// SVG map: one polygon per plot filled by land use, id labels, a legend,
/// and bold outlines on `changed` plots.
pub fn render_map(scenario: &Scenario, plan: &Plan, changed: &BTreeSet<PlotId>) -> String {
    let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in &scenario.plots {
        let (a, b) = p.polygon.bbox();
        lo = Point::new(lo.x.min(a.x), lo.y.min(a.y));
        hi = Point::new(hi.x.max(b.x), hi.y.max(b.y));
    }
    if scenario.plots.is_empty() {
        (lo, hi) = (Point::new(0.0, 0.0), Point::new(1.0, 1.0));
    }
    let margin = 0.03 * (hi.x - lo.x).max(hi.y - lo.y);
    let legend_w = 0.3 * (hi.x - lo.x).max(1.0);
    let (w, h) = (hi.x - lo.x + 2.0 * margin + legend_w, hi.y - lo.y + 2.0 * margin);
    let tx = |p: Point| (p.x - lo.x + margin, hi.y - p.y + margin);
    let font = ((hi.x - lo.x).max(hi.y - lo.y) / 60.0).max(4.0);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.1} {h:.1}" width="{:.0}" height="{:.0}">"#, w / h * 800.0, 800.0);
    let _ = writeln!(svg, r##"<rect x="0" y="0" width="{w:.1}" height="{h:.1}" fill="#f4f4f4"/>"##);
    for p in &scenario.plots {
        let u = plan.use_of(scenario, p.id);
        let points: Vec<String> = p.polygon.vertices().iter().map(|&v| tx(v)).map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let (class, width) = if changed.contains(&p.id) { (r#" class="changed""#, font / 2.5) } else { ("", font / 12.0) };
        let _ = writeln!(
            svg,
            r##"<polygon data-plot-id="{}" data-use="{}"{class} points="{}" fill="{}" stroke="#222" stroke-width="{width:.2}"/>"##,
            p.id,
            u.map_or("unassigned", |u| u.name()),
            points.join(" "),
            palette(u)
        );
    }
    for p in &scenario.plots {
        let (x, y) = tx(p.polygon.centroid());
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{y:.1}" font-size="{font:.1}" text-anchor="middle" dominant-baseline="middle">{}</text>"#, p.id);
    }
    let lx = hi.x - lo.x + 2.0 * margin;
    for (k, u) in LandUse::ALL.iter().enumerate() {
        let y = margin + k as f64 * font * 1.8;
        let _ = writeln!(svg, r##"<rect x="{lx:.1}" y="{y:.1}" width="{font:.1}" height="{font:.1}" fill="{}" stroke="#222" stroke-width="0.5"/>"##, palette(Some(*u)));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="{font:.1}">{}</text>"#, lx + font * 1.5, y + font * 0.85, u.name());
    }
    svg.push_str("</svg>\n");
    svg
}

/// FeatureCollection with one Polygon feature per plot.
pub fn geojson(scenario: &Scenario, plan: Option<&Plan>) -> Value {
    let features: Vec<Value> = scenario
        .plots
        .iter()
        .map(|p| {
            let mut ring: Vec<[f64; 2]> = p.polygon.vertices().iter().map(|v| [v.x, v.y]).collect();
            ring.push(ring[0]);
            let current = plan.and_then(|pl| pl.use_of(scenario, p.id)).or(p.fixed_use());
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "id": p.id,
                    "status": if p.is_vacant() { "vacant" } else { "fixed" },
                    "use": current.map(|u| u.name()),
                    "sub_community": p.sub_community,
                    "description": p.description,
                },
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}
