//! Rule-based baseline planners: random, centralized, decentralized and a
//! greedy coverage planner (GSCA).
//!
//! All four first place each land use's minimum count (in `type_order`),
//! then give every remaining vacant plot a land use, so every output is a
//! total, feasible plan.

use crate::domain::{DomainError, LandUse, Plan, PlotId, Scenario};
use crate::exec::{self, Execution};
use crate::geometry::{dist_point_polygon, Point};
use crate::metrics::{ECOLOGY_RADIUS_M, SERVICE_RADIUS_M};
use crate::population::Population;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Centralized,
    Decentralized,
    Gsca,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::Centralized, Method::Decentralized, Method::Gsca];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Centralized => "centralized",
            Method::Decentralized => "decentralized",
            Method::Gsca => "gsca",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PlannerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PlannerError::BadConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub method: Method,
    pub seed: u64,
    /// Added to center distances before inverting them.
    pub epsilon_m: f64,
    pub type_order: Vec<LandUse>,
    #[serde(default)]
    pub execution: Execution,
}

impl PlannerConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        Self { method, seed, epsilon_m: 50.0, type_order: LandUse::ASSIGNABLE.to_vec(), execution: Execution::default() }
    }

    fn check(&self) -> Result<(), PlannerError> {
        if self.epsilon_m.is_nan() || self.epsilon_m <= 0.0 {
            return Err(PlannerError::BadConfig(format!("epsilon_m must be positive, got {}", self.epsilon_m)));
        }
        let mut sorted = self.type_order.clone();
        sorted.sort();
        if sorted != LandUse::ASSIGNABLE {
            return Err(PlannerError::BadConfig("type_order must list each assignable land use once".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlannerError {
    #[error("infeasible scenario: {0}")]
    Infeasible(#[from] DomainError),
    #[error("invalid planner configuration: {0}")]
    BadConfig(String),
    #[error("the {0} planner needs a population")]
    NeedsPopulation(Method),
}

/// Dispatch on `config.method`. `population` is required for GSCA only.
pub fn plan(scenario: &Scenario, population: Option<&Population>, config: &PlannerConfig) -> Result<Plan, PlannerError> {
    match config.method {
        Method::Random => plan_random(scenario, config),
        Method::Centralized => plan_centralized(scenario, config),
        Method::Decentralized => plan_decentralized(scenario, config),
        Method::Gsca => plan_gsca(scenario, population.ok_or(PlannerError::NeedsPopulation(Method::Gsca))?, config),
    }
}

fn prepare(scenario: &Scenario, config: &PlannerConfig) -> Result<Vec<(LandUse, u32)>, PlannerError> {
    config.check()?;
    scenario.validate()?;
    Ok(config
        .type_order
        .iter()
        .map(|&u| (u, scenario.constraints.minimum(u)))
        .filter(|(_, n)| *n > 0)
        .collect())
}

fn finish(method: Method, assignment: BTreeMap<PlotId, LandUse>) -> Plan {
    Plan::new(method.name(), assignment)
}

fn fill_uniform(remaining: &[PlotId], assignment: &mut BTreeMap<PlotId, LandUse>, rng: &mut ChaCha8Rng) {
    for &id in remaining {
        assignment.insert(id, LandUse::ASSIGNABLE[rng.random_range(0..LandUse::ASSIGNABLE.len())]);
    }
}

pub fn plan_random(scenario: &Scenario, config: &PlannerConfig) -> Result<Plan, PlannerError> {
    let demand = prepare(scenario, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut vacant: Vec<PlotId> = scenario.vacant_ids().collect();
    vacant.shuffle(&mut rng);
    let mut assignment = BTreeMap::new();
    let mut slots = vacant.iter();
    for (u, n) in demand {
        for _ in 0..n {
            assignment.insert(*slots.next().expect("feasibility checked"), u);
        }
    }
    let rest: Vec<PlotId> = slots.copied().collect();
    fill_uniform(&rest, &mut assignment, &mut rng);
    Ok(finish(Method::Random, assignment))
}

/// Selection weight of a plot whose centroid is `d` meters from the center.
pub fn centralized_weight(d: f64, epsilon_m: f64) -> f64 {
    1.0 / (d + epsilon_m)
}

fn weighted_pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    match WeightedIndex::new(weights) {
        Ok(dist) => dist.sample(rng),
        // all zero: uniform
        Err(_) => rng.random_range(0..weights.len()),
    }
}

pub fn plan_centralized(scenario: &Scenario, config: &PlannerConfig) -> Result<Plan, PlannerError> {
    let demand = prepare(scenario, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut remaining: Vec<PlotId> = scenario.vacant_ids().collect();
    let weight_of = |id: PlotId| {
        let c = scenario.plots[id].polygon.centroid();
        centralized_weight(c.dist(scenario.center), config.epsilon_m)
    };
    let mut assignment = BTreeMap::new();
    for (u, n) in demand {
        for _ in 0..n {
            let weights: Vec<f64> = remaining.iter().map(|&id| weight_of(id)).collect();
            let id = remaining.remove(weighted_pick(&weights, &mut rng));
            assignment.insert(id, u);
        }
    }
    fill_uniform(&remaining, &mut assignment, &mut rng);
    Ok(finish(Method::Centralized, assignment))
}

pub fn plan_decentralized(scenario: &Scenario, config: &PlannerConfig) -> Result<Plan, PlannerError> {
    let demand = prepare(scenario, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut remaining: Vec<PlotId> = scenario.vacant_ids().collect();
    let centroid = |id: PlotId| scenario.plots[id].polygon.centroid();
    let mut assignment = BTreeMap::new();
    for (u, n) in demand {
        // Same-type anchors: fixed plots of a matching kind.
        let mut chosen: Vec<Point> = scenario
            .plots
            .iter()
            .filter(|p| p.fixed_use().is_some_and(|f| f == u || (u.is_green() && f.is_green())))
            .map(|p| p.polygon.centroid())
            .collect();
        for _ in 0..n {
            let idx = if chosen.is_empty() {
                rng.random_range(0..remaining.len())
            } else {
                let weights: Vec<f64> = remaining
                    .iter()
                    .map(|&id| {
                        let c = centroid(id);
                        chosen.iter().map(|q| c.dist(*q)).fold(f64::INFINITY, f64::min)
                    })
                    .collect();
                weighted_pick(&weights, &mut rng)
            };
            let id = remaining.remove(idx);
            chosen.push(centroid(id));
            assignment.insert(id, u);
        }
    }
    fill_uniform(&remaining, &mut assignment, &mut rng);
    Ok(finish(Method::Decentralized, assignment))
}

/// Fixed-size bit set over agent indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverSet {
    words: Vec<u64>,
}

impl CoverSet {
    pub fn empty(n: usize) -> Self {
        Self { words: vec![0; n.div_ceil(64)] }
    }

    pub fn from_indices(n: usize, idx: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(n);
        for i in idx {
            s.insert(i);
        }
        s
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    /// Elements of `self` not yet in `covered`.
    pub fn gain_over(&self, covered: &CoverSet) -> usize {
        self.words.iter().zip(&covered.words).map(|(a, b)| (a & !b).count_ones() as usize).sum()
    }

    pub fn union_with(&mut self, other: &CoverSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub candidate: usize,
    pub gain: usize,
}

/// Best available candidate by marginal gain; ties go to the lowest index.
pub fn best_candidate(sets: &[CoverSet], available: &[bool], covered: &CoverSet, exec: Execution) -> Option<GreedyStep> {
    let idx: Vec<usize> = (0..sets.len()).filter(|&i| available[i]).collect();
    let gains = exec::map(exec, &idx, |&i| sets[i].gain_over(covered));
    idx.into_iter()
        .zip(gains)
        .max_by(|(ia, ga), (ib, gb)| ga.cmp(gb).then(ib.cmp(ia)))
        .map(|(candidate, gain)| GreedyStep { candidate, gain })
}

/// Pick up to `k` candidates, each maximizing newly covered elements.
/// Chosen candidates are marked unavailable and `covered` is updated.
pub fn greedy_max_coverage(
    sets: &[CoverSet],
    available: &mut [bool],
    covered: &mut CoverSet,
    k: usize,
    exec: Execution,
) -> Vec<GreedyStep> {
    let mut steps = Vec::with_capacity(k);
    for _ in 0..k {
        let Some(step) = best_candidate(sets, available, covered, exec) else { break };
        available[step.candidate] = false;
        covered.union_with(&sets[step.candidate]);
        steps.push(step);
    }
    steps
}

/// Coverage radius semantics used by GSCA for a land use.
pub fn covers(u: LandUse, d: f64) -> bool {
    if matches!(u, LandUse::Park | LandUse::GreenSpace) {
        d <= ECOLOGY_RADIUS_M
    } else {
        d < SERVICE_RADIUS_M
    }
}

/// Per-step record of a GSCA run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GscaTrace {
    pub picks: Vec<(PlotId, LandUse, usize)>,
}

pub fn plan_gsca(scenario: &Scenario, population: &Population, config: &PlannerConfig) -> Result<Plan, PlannerError> {
    gsca_with_trace(scenario, population, config).map(|(p, _)| p)
}

pub fn gsca_with_trace(
    scenario: &Scenario,
    population: &Population,
    config: &PlannerConfig,
) -> Result<(Plan, GscaTrace), PlannerError> {
    let demand = prepare(scenario, config)?;
    let exec = config.execution;
    let homes: Vec<Point> = population.agents.iter().map(|a| a.profile.home).collect();
    let n = homes.len();
    let vacant: Vec<PlotId> = scenario.vacant_ids().collect();

    // distance rows per vacant plot, then coverage sets per radius kind
    let dist_rows: Vec<Vec<f64>> = exec::map(exec, &vacant, |&id| {
        let poly = &scenario.plots[id].polygon;
        homes.iter().map(|h| dist_point_polygon(*h, poly)).collect()
    });
    let cover_for = |u: LandUse| -> Vec<CoverSet> {
        dist_rows
            .iter()
            .map(|row| CoverSet::from_indices(n, row.iter().enumerate().filter(|(_, d)| covers(u, **d)).map(|(i, _)| i)))
            .collect()
    };
    let service_sets = cover_for(LandUse::School);
    let green_sets = cover_for(LandUse::Park);
    let sets_for = |u: LandUse| if covers(u, ECOLOGY_RADIUS_M + 0.5) { &service_sets } else { &green_sets };

    let mut covered: BTreeMap<LandUse, CoverSet> = BTreeMap::new();
    for u in LandUse::ASSIGNABLE {
        let mut c = CoverSet::empty(n);
        for p in &scenario.plots {
            if p.fixed_use().is_some_and(|f| f == u || (u.is_green() && f.is_green())) {
                for (i, h) in homes.iter().enumerate() {
                    if covers(u, dist_point_polygon(*h, &p.polygon)) {
                        c.insert(i);
                    }
                }
            }
        }
        covered.insert(u, c);
    }

    let mut available = vec![true; vacant.len()];
    let mut assignment = BTreeMap::new();
    let mut trace = GscaTrace { picks: Vec::new() };
    for (u, k) in demand {
        let cov = covered.get_mut(&u).expect("all uses present");
        for step in greedy_max_coverage(sets_for(u), &mut available, cov, k as usize, exec) {
            assignment.insert(vacant[step.candidate], u);
            trace.picks.push((vacant[step.candidate], u, step.gain));
        }
    }
    // leftovers: round-robin over the type order, still greedy per type
    let mut order = config.type_order.iter().cycle();
    while available.iter().any(|a| *a) {
        let u = *order.next().expect("cycle");
        let cov = covered.get_mut(&u).expect("all uses present");
        let step = greedy_max_coverage(sets_for(u), &mut available, cov, 1, exec)[0];
        assignment.insert(vacant[step.candidate], u);
        trace.picks.push((vacant[step.candidate], u, step.gain));
    }
    Ok((finish(Method::Gsca, assignment), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::{mins, strip};
    use crate::domain::{validate_plan, Constraints};

    #[test]
    fn greedy_example_three_candidates() {
        // agents 1..=7 -> indices 0..=6
        let sets = vec![
            CoverSet::from_indices(7, 0..5),
            CoverSet::from_indices(7, 3..6),
            CoverSet::from_indices(7, [6]),
        ];
        let mut avail = vec![true; 3];
        let mut covered = CoverSet::empty(7);
        let steps = greedy_max_coverage(&sets, &mut avail, &mut covered, 2, Execution::Sequential);
        // second step is a 1-1 tie between candidates 1 and 2; lowest index wins
        assert_eq!(steps, vec![GreedyStep { candidate: 0, gain: 5 }, GreedyStep { candidate: 1, gain: 1 }]);
        assert_eq!(covered.len(), 6);
    }

    #[test]
    fn k_equal_to_candidates_takes_all() {
        let sets = vec![CoverSet::from_indices(5, [0, 1]), CoverSet::from_indices(5, [1, 2]), CoverSet::from_indices(5, [4])];
        let mut avail = vec![true; 3];
        let mut covered = CoverSet::empty(5);
        let steps = greedy_max_coverage(&sets, &mut avail, &mut covered, 3, Execution::Parallel);
        assert_eq!(steps.len(), 3);
        assert_eq!(covered, CoverSet::from_indices(5, [0, 1, 2, 4]));
    }

    #[test]
    fn random_fills_minimums_exactly_when_tight() {
        let s = strip(7, mins(&[(LandUse::School, 2), (LandUse::Office, 3), (LandUse::Park, 1)]));
        let plan = plan_random(&s, &PlannerConfig::new(Method::Random, 5)).unwrap();
        assert!(validate_plan(&s, &plan).is_empty());
        let count = |u| plan.assignment.values().filter(|&&x| x == u).count();
        assert_eq!((count(LandUse::School), count(LandUse::Office), count(LandUse::Park)), (2, 3, 1));
    }

    #[test]
    fn single_plot_single_type() {
        let s = strip(2, mins(&[(LandUse::Hospital, 1)]));
        for m in [Method::Centralized, Method::Decentralized, Method::Random] {
            let plan = plan(&s, None, &PlannerConfig::new(m, 1)).unwrap();
            assert_eq!(plan.get(1), Some(LandUse::Hospital));
        }
    }

    #[test]
    fn infeasible_and_bad_config_rejected() {
        let s = strip(2, mins(&[(LandUse::Hospital, 2)]));
        assert!(matches!(plan_random(&s, &PlannerConfig::new(Method::Random, 0)), Err(PlannerError::Infeasible(_))));
        let ok = strip(3, Constraints::default());
        let mut cfg = PlannerConfig::new(Method::Centralized, 0);
        cfg.epsilon_m = 0.0;
        assert!(matches!(plan_centralized(&ok, &cfg), Err(PlannerError::BadConfig(_))));
        assert!(matches!(plan(&ok, None, &PlannerConfig::new(Method::Gsca, 0)), Err(PlannerError::NeedsPopulation(_))));
        assert_eq!("GSCA".parse::<Method>().unwrap(), Method::Gsca);
    }

    #[test]
    fn centralized_weight_ratio() {
        let r = centralized_weight(100.0, 50.0) / centralized_weight(900.0, 50.0);
        assert!((r - 950.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_are_reproducible() {
        let s = strip(12, mins(&[(LandUse::School, 2), (LandUse::Clinic, 2)]));
        for m in [Method::Random, Method::Centralized, Method::Decentralized] {
            let a = plan(&s, None, &PlannerConfig::new(m, 77)).unwrap();
            let b = plan(&s, None, &PlannerConfig::new(m, 77)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.provenance, m.name());
        }
    }
}
