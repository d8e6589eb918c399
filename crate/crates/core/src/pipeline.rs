//! Proposal, per-sub-community discussion, and feedback iteration, with the
//! metric trajectory recorded along the way.

use crate::agents::{
    check_sp_revision, AgentBackend, AgentError, AgentRole, DiscussRequest, FeedbackRequest, OpineRequest, Opinion,
    ProposeRequest, Transcript,
};
use crate::domain::{validate_plan, DomainError, Plan, PlotId, Scenario, Violation};
use crate::exec::{self, Execution};
use crate::metrics::{evaluate_with, Facilities, MetricsError, MetricsSummary};
use crate::planners::{plan as run_planner, Method, PlannerConfig, PlannerError};
use crate::population::{Population, Resident, VulnerableGroup};
use crate::scenario_gen::render_map;
use agora_llm::UsageSummary;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub max_feedback_iterations: u32,
    pub sp_max_changes: usize,
    /// Residents heard per sub-community; `None` hears everyone.
    pub opinion_sample: Option<usize>,
    pub discussion_passes: u32,
    /// Sub-community processing order; ascending ids when absent.
    pub sub_community_order: Option<Vec<u32>>,
    /// Skip the discussion phase entirely.
    pub skip_discussion: bool,
    /// Also run the feedback loop right after the initial proposal.
    pub check_initial: bool,
    /// Concurrent resident calls.
    pub parallelism: usize,
    pub execution: Execution,
    /// Record wall-clock time in the result and transcript.
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            max_feedback_iterations: 5,
            sp_max_changes: 3,
            opinion_sample: None,
            discussion_passes: 1,
            sub_community_order: None,
            skip_discussion: false,
            check_initial: false,
            parallelism: 8,
            execution: Execution::default(),
            record_timing: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, scenario: &Scenario) -> Result<(), PipelineError> {
        if self.max_feedback_iterations == 0 {
            return Err(PipelineError::Config("max_feedback_iterations must be at least 1".into()));
        }
        if let Some(order) = &self.sub_community_order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (1..=scenario.n_sub_communities).collect::<Vec<_>>() {
                return Err(PipelineError::Config(format!(
                    "sub_community_order must be a permutation of 1..={}",
                    scenario.n_sub_communities
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{phase}: {source}")]
    Agent { phase: String, source: AgentError },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("plan still violates {} requirement(s) after {iterations} feedback iteration(s)", violations.len())]
    Infeasible { iterations: u32, plan: Box<Plan>, violations: Vec<Violation> },
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("population has agents without frozen needs")]
    NeedsNotFrozen,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn agent_err(phase: impl Into<String>) -> impl FnOnce(AgentError) -> PipelineError {
    let phase = phase.into();
    move |source| PipelineError::Agent { phase, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    /// 0 for the initial proposal and feedback steps.
    pub sub_community: u32,
    pub opinions: usize,
    pub changed: Vec<PlotId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub initial_plan: Plan,
    /// Plans after each sub-community revision, in processing order.
    pub step_plans: Vec<Plan>,
    pub final_plan: Plan,
    pub trajectory: Vec<MetricsSummary>,
    pub steps: Vec<StepRecord>,
    pub feedback_iterations: u32,
    pub backend: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

fn stamp(plan: &Plan, step: u32) -> Plan {
    Plan { provenance: "pipeline".into(), revision_step: step, ..plan.clone() }
}

/// Residents heard in one sub-community: everyone, or a seeded sample that
/// keeps at least one member of each vulnerable group present.
pub fn sample_residents(residents: Vec<&Resident>, sample: Option<usize>, seed: u64) -> Vec<&Resident> {
    let Some(k) = sample.filter(|&k| k < residents.len()) else { return residents };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: BTreeSet<u32> = BTreeSet::new();
    for g in VulnerableGroup::ALL {
        let members: Vec<&Resident> = residents.iter().copied().filter(|r| r.profile.vulnerable.contains(&g)).collect();
        if chosen.len() < k && !members.iter().any(|r| chosen.contains(&r.profile.id)) {
            if let Some(r) = members.choose(&mut rng) {
                chosen.insert(r.profile.id);
            }
        }
    }
    let mut rest: Vec<&Resident> = residents.iter().copied().filter(|r| !chosen.contains(&r.profile.id)).collect();
    rest.shuffle(&mut rng);
    for r in rest.into_iter().take(k - chosen.len()) {
        chosen.insert(r.profile.id);
    }
    residents.into_iter().filter(|r| chosen.contains(&r.profile.id)).collect()
}

/// Ask every (sampled) resident of a sub-community about `plan`. Opinions
/// are committed to the transcript in ascending agent id order.
pub fn solicit_opinions(
    scenario: &Scenario,
    population: &Population,
    plan: &Plan,
    sub_community: u32,
    backend: &dyn AgentBackend,
    transcript: &Transcript,
    config: &RunConfig,
) -> Result<Vec<Opinion>, PipelineError> {
    let residents = sample_residents(
        population.in_sub_community(scenario, sub_community),
        config.opinion_sample,
        config.seed.wrapping_add(sub_community as u64),
    );
    let facilities = Facilities::new(scenario, plan);
    let results = exec::map_bounded(config.execution, config.parallelism, &residents, |r| {
        backend.opine(&OpineRequest { scenario, resident: r, facilities: &facilities, question: None })
    });
    let mut out = Vec::with_capacity(results.len());
    for (r, res) in residents.iter().zip(results) {
        let ex = res.map_err(agent_err(format!("opinion of resident {}", r.profile.id)))?;
        transcript.commit(AgentRole::Resident, Some(r.profile.id), &ex);
        out.push(ex.payload);
    }
    Ok(out)
}

/// One discussion round in a sub-community: opinions, SP revision, apply.
pub fn discuss_sub_community(
    scenario: &Scenario,
    population: &Population,
    plan: &Plan,
    sub_community: u32,
    backend: &dyn AgentBackend,
    transcript: &Transcript,
    config: &RunConfig,
) -> Result<(Plan, Vec<Opinion>, crate::agents::PlanRevision), PipelineError> {
    if sub_community == 0 || sub_community > scenario.n_sub_communities {
        return Err(PipelineError::Config(format!("no sub-community {sub_community}")));
    }
    let opinions = solicit_opinions(scenario, population, plan, sub_community, backend, transcript, config)?;
    let req = DiscussRequest { scenario, plan, sub_community, opinions: &opinions, max_changes: config.sp_max_changes };
    let ex = backend.discuss(&req).map_err(agent_err(format!("discussion in sub-community {sub_community}")))?;
    check_sp_revision(&req, &ex.payload).map_err(|reason| PipelineError::Agent {
        phase: format!("discussion in sub-community {sub_community}"),
        source: AgentError::Rejected { attempts: 1, reason },
    })?;
    transcript.commit(AgentRole::Sp, Some(sub_community), &ex);
    let next = plan.apply(scenario, &ex.payload.pairs())?;
    Ok((next, opinions, ex.payload))
}

/// Feed violations back to the chief planner until the plan is feasible.
/// Returns the plan and the number of revisions made.
pub fn feedback_loop(
    scenario: &Scenario,
    plan: &Plan,
    backend: &dyn AgentBackend,
    transcript: &Transcript,
    max_iterations: u32,
) -> Result<(Plan, u32), PipelineError> {
    let mut plan = plan.clone();
    for i in 0..max_iterations {
        let violations = validate_plan(scenario, &plan);
        if violations.is_empty() {
            return Ok((plan, i));
        }
        let ex = backend
            .feedback(&FeedbackRequest { scenario, plan: &plan, violations: &violations })
            .map_err(agent_err(format!("feedback iteration {}", i + 1)))?;
        transcript.commit(AgentRole::Cp, None, &ex);
        plan = plan.apply(scenario, &ex.payload.pairs())?;
    }
    let violations = validate_plan(scenario, &plan);
    if violations.is_empty() {
        Ok((plan, max_iterations))
    } else {
        Err(PipelineError::Infeasible { iterations: max_iterations, plan: Box::new(plan), violations })
    }
}

pub fn run(
    scenario: &Scenario,
    population: &Population,
    backend: &dyn AgentBackend,
    transcript: &Transcript,
    config: &RunConfig,
) -> Result<RunResult, PipelineError> {
    let started = Instant::now();
    config.validate(scenario)?;
    scenario.validate()?;
    if !population.all_needs_frozen() {
        return Err(PipelineError::NeedsNotFrozen);
    }
    let evaluate = |plan: &Plan| evaluate_with(scenario, plan, population, config.execution).map(|r| r.summary());

    let ex = backend
        .propose(&ProposeRequest { scenario, population, seed: config.seed, execution: config.execution })
        .map_err(agent_err("chief planner proposal"))?;
    transcript.commit(AgentRole::Cp, None, &ex);
    let mut plan = stamp(&Plan::new("pipeline", Default::default()).apply(scenario, &ex.payload.pairs())?, 0);
    let mut feedback_iterations = 0;
    if config.check_initial {
        let (p, n) = feedback_loop(scenario, &plan, backend, transcript, config.max_feedback_iterations)?;
        plan = stamp(&p, 0);
        feedback_iterations += n;
    }
    let initial_plan = plan.clone();
    let mut trajectory = vec![evaluate(&plan)?];
    let mut steps = vec![StepRecord { step: 0, sub_community: 0, opinions: 0, changed: Vec::new() }];
    let mut step_plans = Vec::new();

    if !config.skip_discussion {
        let order = config.sub_community_order.clone().unwrap_or_else(|| (1..=scenario.n_sub_communities).collect());
        for (k, &sc) in order.iter().enumerate() {
            let before = plan.clone();
            let mut heard = 0;
            for _ in 0..config.discussion_passes {
                let (next, opinions, _) = discuss_sub_community(scenario, population, &plan, sc, backend, transcript, config)?;
                heard += opinions.len();
                plan = next;
            }
            let step = k as u32 + 1;
            plan = stamp(&plan, step);
            step_plans.push(plan.clone());
            trajectory.push(evaluate(&plan)?);
            steps.push(StepRecord { step, sub_community: sc, opinions: heard, changed: plan.changed_from(&before).into_iter().collect() });
        }
    }

    let before = plan.clone();
    let (fixed, n) = feedback_loop(scenario, &plan, backend, transcript, config.max_feedback_iterations)?;
    feedback_iterations += n;
    if n > 0 {
        let step = trajectory.len() as u32;
        plan = stamp(&fixed, step);
        trajectory.push(evaluate(&plan)?);
        steps.push(StepRecord { step, sub_community: 0, opinions: 0, changed: plan.changed_from(&before).into_iter().collect() });
    }

    Ok(RunResult {
        initial_plan,
        step_plans,
        final_plan: plan,
        trajectory,
        steps,
        feedback_iterations,
        backend: format!("{:?}", backend.kind()).to_lowercase(),
        model: backend.model(),
        usage: backend.usage(),
        wall_clock_ms: config.record_timing.then(|| started.elapsed().as_millis() as u64),
    })
}

/// Write the run directory. `metadata` is embedded verbatim in report.json.
pub fn write_run_dir(
    dir: &Path,
    scenario: &Scenario,
    result: &RunResult,
    transcript: &Transcript,
    metadata: &serde_json::Value,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("plan_initial.json"), result.initial_plan.to_json())?;
    for p in &result.step_plans {
        std::fs::write(dir.join(format!("plan_step_{}.json", p.revision_step)), p.to_json())?;
    }
    std::fs::write(dir.join("plan_final.json"), result.final_plan.to_json())?;
    std::fs::write(dir.join("trajectory.csv"), crate::metrics::trajectory_csv(&result.trajectory))?;
    transcript.write_jsonl(&dir.join("transcript.jsonl"))?;
    let changed = result.final_plan.changed_from(&result.initial_plan);
    std::fs::write(dir.join("map_final.svg"), render_map(scenario, &result.final_plan, &changed))?;
    let report = serde_json::json!({
        "metadata": metadata,
        "backend": result.backend,
        "model": result.model,
        "feedback_iterations": result.feedback_iterations,
        "trajectory": result.trajectory,
        "steps": result.steps,
        "usage": result.usage,
        "wall_clock_ms": result.wall_clock_ms,
        "transcript": "transcript.jsonl",
        "transcript_entries": transcript.len(),
    });
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareMethod {
    Random,
    Centralized,
    Decentralized,
    Gsca,
    Pipeline,
    PipelineNoDiscussion,
}

impl CompareMethod {
    pub const ALL: [CompareMethod; 6] = [
        CompareMethod::Random,
        CompareMethod::Centralized,
        CompareMethod::Decentralized,
        CompareMethod::Gsca,
        CompareMethod::Pipeline,
        CompareMethod::PipelineNoDiscussion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CompareMethod::Random => "random",
            CompareMethod::Centralized => "centralized",
            CompareMethod::Decentralized => "decentralized",
            CompareMethod::Gsca => "gsca",
            CompareMethod::Pipeline => "pipeline",
            CompareMethod::PipelineNoDiscussion => "pipeline-no-discussion",
        }
    }

    fn planner(self) -> Option<Method> {
        match self {
            CompareMethod::Random => Some(Method::Random),
            CompareMethod::Centralized => Some(Method::Centralized),
            CompareMethod::Decentralized => Some(Method::Decentralized),
            CompareMethod::Gsca => Some(Method::Gsca),
            _ => None,
        }
    }
}

impl fmt::Display for CompareMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CompareMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CompareMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: CompareMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Plan that was scored; kept out of the table's JSON form.
    #[serde(skip)]
    pub plan: Option<Plan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,service,ecology,satisfaction,inclusion,error\n");
        for r in &self.rows {
            match (&r.metrics, &r.error) {
                (Some(m), _) => out.push_str(&format!("{},{},{},{},{},\n", r.method, m.service, m.ecology, m.satisfaction, m.inclusion)),
                (None, e) => out.push_str(&format!("{},,,,,{}\n", r.method, e.as_deref().unwrap_or("").replace(',', ";"))),
            }
        }
        out
    }

    pub fn get(&self, method: CompareMethod) -> Option<&MetricsSummary> {
        self.rows.iter().find(|r| r.method == method).and_then(|r| r.metrics.as_ref())
    }
}

/// Score each method on the same frozen population. Rows run in parallel;
/// a failing row carries its error instead of metrics.
pub fn compare_methods(
    scenario: &Scenario,
    population: &Population,
    methods: &[CompareMethod],
    backend: &dyn AgentBackend,
    config: &RunConfig,
) -> ComparisonTable {
    let rows = exec::map(config.execution, methods, |&m| {
        let outcome: Result<(MetricsSummary, Plan), String> = (|| {
            let plan = match m.planner() {
                Some(method) => {
                    let mut pc = PlannerConfig::new(method, config.seed);
                    pc.execution = config.execution;
                    run_planner(scenario, Some(population), &pc).map_err(|e| e.to_string())?
                }
                None => {
                    let cfg = RunConfig { skip_discussion: m == CompareMethod::PipelineNoDiscussion, ..config.clone() };
                    run(scenario, population, backend, &Transcript::new(), &cfg).map_err(|e| e.to_string())?.final_plan
                }
            };
            let mut s = evaluate_with(scenario, &plan, population, config.execution).map_err(|e| e.to_string())?.summary();
            s.step = 0;
            Ok((s, plan))
        })();
        match outcome {
            Ok((metrics, plan)) => ComparisonRow { method: m, metrics: Some(metrics), error: None, plan: Some(plan) },
            Err(e) => ComparisonRow { method: m, metrics: None, error: Some(e), plan: None },
        }
    });
    ComparisonTable { seed: config.seed, rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ScriptedBackend;
    use crate::population::{elicit_needs, synthesize, DemographicStats};
    use crate::scenario_gen::{generate, ScenarioTemplate};

    fn setup(n: u32) -> (Scenario, Population) {
        let s = generate(&ScenarioTemplate::hlg(), 5).unwrap();
        let pop = synthesize(&s, &DemographicStats::hlg(), n, 3, 5).unwrap();
        let pop = elicit_needs(&pop, &ScriptedBackend::new(), &Transcript::new(), Execution::Parallel, 4).unwrap();
        (s, pop)
    }

    #[test]
    fn run_produces_feasible_plan_and_full_trajectory() {
        let (s, pop) = setup(150);
        let t = Transcript::new();
        let res = run(&s, &pop, &ScriptedBackend::new(), &t, &RunConfig::default()).unwrap();
        assert!(validate_plan(&s, &res.final_plan).is_empty());
        assert!(res.trajectory.len() >= 5);
        assert_eq!(res.trajectory[0].step, 0);
        assert_eq!(res.step_plans.len(), 4);
        for p in res.step_plans.iter().chain([&res.initial_plan, &res.final_plan]) {
            assert_eq!(p.assignment.len(), 42);
        }
        assert!(!t.is_empty());
        let again = run(&s, &pop, &ScriptedBackend::new(), &Transcript::new(), &RunConfig::default()).unwrap();
        assert_eq!(again, res);
    }

    #[test]
    fn no_discussion_has_only_initial_step_when_feasible() {
        let (s, pop) = setup(60);
        let cfg = RunConfig { skip_discussion: true, ..RunConfig::default() };
        let res = run(&s, &pop, &ScriptedBackend::new(), &Transcript::new(), &cfg).unwrap();
        // the proposal is already feasible, so nothing changes
        assert_eq!(res.trajectory.len(), 1);
        assert_eq!(res.final_plan, res.initial_plan);
    }

    #[test]
    fn sampling_keeps_vulnerable_groups() {
        let (s, pop) = setup(200);
        let residents = pop.in_sub_community(&s, 1);
        let groups: BTreeSet<VulnerableGroup> = residents.iter().flat_map(|r| r.profile.vulnerable.iter().copied()).collect();
        let sample = sample_residents(residents.clone(), Some(10), 3);
        assert_eq!(sample.len(), 10.min(residents.len()));
        for g in groups {
            assert!(sample.iter().any(|r| r.profile.vulnerable.contains(&g)));
        }
        assert!(sample.windows(2).all(|w| w[0].profile.id < w[1].profile.id));
    }

    #[test]
    fn comparison_table_has_every_row() {
        let (s, pop) = setup(80);
        let table = compare_methods(&s, &pop, &CompareMethod::ALL, &ScriptedBackend::new(), &RunConfig::default());
        assert_eq!(table.rows.len(), 6);
        assert!(table.rows.iter().all(|r| r.metrics.is_some()), "{table:?}");
        assert_eq!(table.to_csv().lines().count(), 7);
        let single = compare_methods(&s, &pop, &[CompareMethod::Gsca], &ScriptedBackend::new(), &RunConfig::default());
        assert_eq!(single.rows.len(), 1);
    }

    #[test]
    fn bad_config_rejected() {
        let (s, pop) = setup(20);
        let cfg = RunConfig { max_feedback_iterations: 0, ..RunConfig::default() };
        assert!(matches!(run(&s, &pop, &ScriptedBackend::new(), &Transcript::new(), &cfg), Err(PipelineError::Config(_))));
        let cfg = RunConfig { sub_community_order: Some(vec![1, 1, 2, 3]), ..RunConfig::default() };
        assert!(matches!(run(&s, &pop, &ScriptedBackend::new(), &Transcript::new(), &cfg), Err(PipelineError::Config(_))));
    }
}
