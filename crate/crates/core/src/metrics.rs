//! Service, Ecology, Satisfaction and Inclusion.
//!
//! Every metric is a mean of per-agent indicator fractions. Numerators are
//! accumulated as integers over a common denominator (840 is divisible by
//! every need-set size 1..=8), so the final values are a single correctly
//! rounded division: independent of agent order and of execution mode.

use crate::domain::{validate_plan, LandUse, Plan, PlotId, Scenario};
use crate::exec::{self, Execution};
use crate::geometry::{dist_point_polygon, Point, Polygon};
use crate::population::{Population, ResidentProfile};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Accessibility threshold for Service, Satisfaction and Inclusion (strict).
pub const SERVICE_RADIUS_M: f64 = 500.0;
/// Ecology service range around green plots (inclusive).
pub const ECOLOGY_RADIUS_M: f64 = 300.0;

const N_TYPES: usize = LandUse::ASSIGNABLE.len();
const NEED_DENOMINATOR: u64 = 840;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("agent {0} has no frozen need set")]
    MissingNeeds(u32),
    #[error("population has no vulnerable agents")]
    NoVulnerableAgents,
    #[error("plan is structurally invalid: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScore {
    pub agent_id: u32,
    /// Nearest plot of each assignable use; `None` when no such plot exists.
    pub distances: BTreeMap<LandUse, Option<f64>>,
    pub in_ecology_range: bool,
    pub satisfaction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub service: f64,
    pub ecology: f64,
    pub satisfaction: f64,
    pub inclusion: f64,
    pub revision_step: u32,
    #[serde(default)]
    pub per_agent: Vec<AgentScore>,
}

/// The four scores without per-agent detail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub step: u32,
    pub service: f64,
    pub ecology: f64,
    pub satisfaction: f64,
    pub inclusion: f64,
}

impl MetricsReport {
    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            step: self.revision_step,
            service: self.service,
            ecology: self.ecology,
            satisfaction: self.satisfaction,
            inclusion: self.inclusion,
        }
    }
}

/// Polygons grouped by what they provide.
pub struct Facilities<'a> {
    by_type: [Vec<(PlotId, &'a Polygon)>; N_TYPES],
    green: Vec<&'a Polygon>,
}

impl<'a> Facilities<'a> {
    pub fn new(scenario: &'a Scenario, plan: &Plan) -> Self {
        let mut by_type: [Vec<(PlotId, &Polygon)>; N_TYPES] = Default::default();
        let mut green = Vec::new();
        for plot in &scenario.plots {
            let Some(u) = plan.use_of(scenario, plot.id) else { continue };
            if let Some(i) = u.assignable_index() {
                by_type[i].push((plot.id, &plot.polygon));
            }
            if u.is_green() {
                green.push(&plot.polygon);
            }
        }
        Self { by_type, green }
    }

    pub fn distances(&self, home: Point) -> [f64; N_TYPES] {
        std::array::from_fn(|i| self.by_type[i].iter().map(|(_, poly)| dist_point_polygon(home, poly)).fold(f64::INFINITY, f64::min))
    }

    /// Nearest plot of `u` and its distance; ties go to the lowest id.
    pub fn nearest(&self, home: Point, u: LandUse) -> Option<(PlotId, f64)> {
        let i = u.assignable_index()?;
        self.by_type[i]
            .iter()
            .map(|(id, poly)| (*id, dist_point_polygon(home, poly)))
            .fold(None, |best: Option<(PlotId, f64)>, (id, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((id, d)),
            })
    }

    pub fn in_ecology_range(&self, home: Point) -> bool {
        self.green.iter().any(|poly| dist_point_polygon(home, poly) <= ECOLOGY_RADIUS_M)
    }
}

/// Distance from the agent's home to the nearest plot of `land_use`
/// (infinite when there is none).
pub fn min_distance(agent: &ResidentProfile, land_use: LandUse, scenario: &Scenario, plan: &Plan) -> f64 {
    scenario
        .plots
        .iter()
        .filter(|p| plan.use_of(scenario, p.id) == Some(land_use))
        .map(|p| dist_point_polygon(agent.home, &p.polygon))
        .fold(f64::INFINITY, f64::min)
}

pub fn accessible(d: f64) -> bool {
    d < SERVICE_RADIUS_M
}

struct AgentRow {
    id: u32,
    distances: [f64; N_TYPES],
    ecology: bool,
    service_hits: u64,
    /// Satisfaction scaled by `NEED_DENOMINATOR`.
    need_score: Option<u64>,
    need_len: usize,
    vulnerable: bool,
}

fn score_rows(scenario: &Scenario, plan: &Plan, population: &Population, exec: Execution) -> Vec<AgentRow> {
    let facilities = Facilities::new(scenario, plan);
    exec::map(exec, &population.agents, |a| {
        let distances = facilities.distances(a.profile.home);
        let service_hits = distances.iter().filter(|d| accessible(**d)).count() as u64;
        let (need_score, need_len) = match &a.needs {
            Some(n) => {
                let hits = n
                    .needs()
                    .iter()
                    .filter(|u| accessible(distances[u.assignable_index().expect("needs are assignable")]))
                    .count() as u64;
                (Some(hits * (NEED_DENOMINATOR / n.needs().len() as u64)), n.needs().len())
            }
            None => (None, 0),
        };
        AgentRow {
            id: a.profile.id,
            distances,
            ecology: facilities.in_ecology_range(a.profile.home),
            service_hits,
            need_score,
            need_len,
            vulnerable: a.profile.is_vulnerable(),
        }
    })
}

fn check_inputs(scenario: &Scenario, plan: &Plan, population: &Population) -> Result<(), MetricsError> {
    if population.agents.is_empty() {
        return Err(MetricsError::EmptyPopulation);
    }
    if let Some(v) = validate_plan(scenario, plan).into_iter().find(|v| v.is_structural() && !matches!(v, crate::domain::Violation::Unassigned { .. })) {
        return Err(MetricsError::InvalidPlan(v.to_string()));
    }
    Ok(())
}

fn need_aggregate<'a>(rows: impl Iterator<Item = &'a AgentRow>) -> Result<(u64, u64), MetricsError> {
    let (mut num, mut n) = (0u64, 0u64);
    for r in rows {
        num += r.need_score.ok_or(MetricsError::MissingNeeds(r.id))?;
        n += 1;
    }
    Ok((num, n))
}

fn ratio(num: u64, den: u64) -> f64 {
    num as f64 / den as f64
}

pub fn service(scenario: &Scenario, plan: &Plan, population: &Population) -> Result<f64, MetricsError> {
    check_inputs(scenario, plan, population)?;
    let rows = score_rows(scenario, plan, population, Execution::default());
    Ok(ratio(rows.iter().map(|r| r.service_hits).sum(), N_TYPES as u64 * rows.len() as u64))
}

pub fn ecology(scenario: &Scenario, plan: &Plan, population: &Population) -> Result<f64, MetricsError> {
    check_inputs(scenario, plan, population)?;
    let rows = score_rows(scenario, plan, population, Execution::default());
    Ok(ratio(rows.iter().filter(|r| r.ecology).count() as u64, rows.len() as u64))
}

/// Mean satisfaction and the per-agent values, in population order.
pub fn satisfaction(scenario: &Scenario, plan: &Plan, population: &Population) -> Result<(f64, Vec<(u32, f64)>), MetricsError> {
    check_inputs(scenario, plan, population)?;
    let rows = score_rows(scenario, plan, population, Execution::default());
    let (num, n) = need_aggregate(rows.iter())?;
    let per_agent = rows.iter().map(|r| (r.id, ratio(r.need_score.unwrap_or(0), NEED_DENOMINATOR))).collect();
    Ok((ratio(num, NEED_DENOMINATOR * n), per_agent))
}

pub fn inclusion(scenario: &Scenario, plan: &Plan, population: &Population) -> Result<f64, MetricsError> {
    check_inputs(scenario, plan, population)?;
    let rows = score_rows(scenario, plan, population, Execution::default());
    let (num, n) = need_aggregate(rows.iter().filter(|r| r.vulnerable))?;
    if n == 0 {
        return Err(MetricsError::NoVulnerableAgents);
    }
    Ok(ratio(num, NEED_DENOMINATOR * n))
}

pub fn evaluate(scenario: &Scenario, plan: &Plan, population: &Population) -> Result<MetricsReport, MetricsError> {
    evaluate_with(scenario, plan, population, Execution::default())
}

pub fn evaluate_with(
    scenario: &Scenario,
    plan: &Plan,
    population: &Population,
    exec: Execution,
) -> Result<MetricsReport, MetricsError> {
    check_inputs(scenario, plan, population)?;
    let rows = score_rows(scenario, plan, population, exec);
    let n = rows.len() as u64;
    let service = ratio(rows.iter().map(|r| r.service_hits).sum(), N_TYPES as u64 * n);
    let ecology = ratio(rows.iter().filter(|r| r.ecology).count() as u64, n);
    let (sat_num, sat_n) = need_aggregate(rows.iter())?;
    let (inc_num, inc_n) = need_aggregate(rows.iter().filter(|r| r.vulnerable))?;
    if inc_n == 0 {
        return Err(MetricsError::NoVulnerableAgents);
    }
    let per_agent = rows
        .iter()
        .map(|r| AgentScore {
            agent_id: r.id,
            distances: LandUse::ASSIGNABLE
                .iter()
                .zip(r.distances)
                .map(|(&u, d)| (u, d.is_finite().then_some(d)))
                .collect(),
            in_ecology_range: r.ecology,
            satisfaction: ratio(r.need_score.unwrap_or(0), NEED_DENOMINATOR),
        })
        .collect();
    debug_assert!(rows.iter().all(|r| r.need_len > 0));
    Ok(MetricsReport {
        service,
        ecology,
        satisfaction: ratio(sat_num, NEED_DENOMINATOR * sat_n),
        inclusion: ratio(inc_num, NEED_DENOMINATOR * inc_n),
        revision_step: plan.revision_step,
        per_agent,
    })
}

/// `step,service,ecology,satisfaction,inclusion` with a header row.
pub fn trajectory_csv(trajectory: &[MetricsSummary]) -> String {
    let mut out = String::from("step,service,ecology,satisfaction,inclusion\n");
    for m in trajectory {
        out.push_str(&format!("{},{},{},{},{}\n", m.step, m.service, m.ecology, m.satisfaction, m.inclusion));
    }
    out
}
