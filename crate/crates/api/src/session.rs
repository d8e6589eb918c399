//! One sandbox session: the scenario, a frozen population and the live plan.
//!
//! Reads take a cheap snapshot of the current state. Mutations go through a
//! single writer lock; the tokio mutex hands it out in arrival order.

use agora_core::agents::{AgentBackend, AgentRole, OpineRequest, Opinion, PlanRevision, Transcript, TranscriptEntry};
use agora_core::domain::{validate_plan, LandUse, Plan, PlotId, Scenario, Violation};
use agora_core::metrics::{evaluate_with, Facilities, MetricsReport, MetricsSummary};
use agora_core::pipeline::{discuss_sub_community, PipelineError, RunConfig};
use agora_core::population::Population;
use parking_lot::RwLock;
use serde::Serialize;
use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

pub const UNDO_DEPTH: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("agent failure: {0}")]
    Agent(String),
    #[error("{0}")]
    Internal(String),
}

/// State visible to readers. Replaced wholesale on every mutation.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub version: u64,
    pub plan: Plan,
    pub metrics: MetricsReport,
    pub violations: Vec<Violation>,
    pub trajectory: Vec<MetricsSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MutationOutcome {
    pub version: u64,
    pub metrics: MetricsReport,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscussOutcome {
    pub version: u64,
    pub sub_community: u32,
    pub revision: PlanRevision,
    pub opinions: Vec<Opinion>,
    pub changed: BTreeSet<PlotId>,
    pub metrics: MetricsReport,
    pub violations: Vec<Violation>,
}

/// Held by whoever is mutating the session.
#[derive(Debug, Default)]
pub struct WriterState {
    undo: VecDeque<Arc<Snapshot>>,
}

impl WriterState {
    pub fn undo_depth(&self) -> usize {
        self.undo.len()
    }
}

pub struct Session {
    pub id: String,
    pub scenario: Scenario,
    pub population: Population,
    pub backend: Arc<dyn AgentBackend>,
    pub config: RunConfig,
    pub transcript: Transcript,
    current: RwLock<Arc<Snapshot>>,
    writer: Arc<tokio::sync::Mutex<WriterState>>,
}

impl Session {
    /// Population needs must already be frozen.
    pub fn new(
        scenario: Scenario,
        population: Population,
        plan: Plan,
        backend: Arc<dyn AgentBackend>,
        config: RunConfig,
    ) -> Result<Self, SessionError> {
        scenario.validate().map_err(|e| SessionError::BadRequest(e.to_string()))?;
        if !population.all_needs_frozen() {
            return Err(SessionError::BadRequest("population has agents without frozen needs".into()));
        }
        if let Some(v) = validate_plan(&scenario, &plan).into_iter().find(Violation::is_structural) {
            return Err(SessionError::BadRequest(format!("initial plan is not usable: {v}")));
        }
        let metrics = evaluate_with(&scenario, &plan, &population, config.execution)
            .map_err(|e| SessionError::BadRequest(e.to_string()))?;
        let violations = validate_plan(&scenario, &plan);
        let first = Snapshot { version: 0, trajectory: vec![metrics.summary()], plan, metrics, violations };
        Ok(Self {
            id: format!("{:032x}", rand::random::<u128>()),
            scenario,
            population,
            backend,
            config,
            transcript: Transcript::with_timestamps(),
            current: RwLock::new(Arc::new(first)),
            writer: Arc::new(tokio::sync::Mutex::new(WriterState::default())),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().clone()
    }

    pub fn writer(&self) -> Arc<tokio::sync::Mutex<WriterState>> {
        self.writer.clone()
    }

    fn check_version(&self, expected: Option<u64>) -> Result<Arc<Snapshot>, SessionError> {
        let snap = self.snapshot();
        match expected {
            Some(v) if v != snap.version => {
                Err(SessionError::Conflict(format!("plan changed: expected version {v}, current is {}", snap.version)))
            }
            _ => Ok(snap),
        }
    }

    /// Scores `plan`, pushes the old state on the undo stack and publishes.
    fn publish(&self, w: &mut WriterState, prev: Arc<Snapshot>, mut plan: Plan) -> Result<Arc<Snapshot>, SessionError> {
        let step = prev.trajectory.len() as u32;
        plan.revision_step = step;
        let mut metrics = evaluate_with(&self.scenario, &plan, &self.population, self.config.execution)
            .map_err(|e| SessionError::Internal(e.to_string()))?;
        metrics.revision_step = step;
        let mut trajectory = prev.trajectory.clone();
        trajectory.push(metrics.summary());
        let next = Arc::new(Snapshot {
            version: prev.version + 1,
            violations: validate_plan(&self.scenario, &plan),
            plan,
            metrics,
            trajectory,
        });
        w.undo.push_back(prev);
        if w.undo.len() > UNDO_DEPTH {
            w.undo.pop_front();
        }
        *self.current.write() = next.clone();
        Ok(next)
    }

    /// Applies every edit or none.
    pub fn edit(
        &self,
        w: &mut WriterState,
        edits: &[(PlotId, LandUse)],
        expected: Option<u64>,
    ) -> Result<MutationOutcome, SessionError> {
        if edits.is_empty() {
            return Err(SessionError::BadRequest("no edits given".into()));
        }
        let prev = self.check_version(expected)?;
        let mut plan = prev.plan.apply(&self.scenario, edits).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        plan.provenance = "sandbox".into();
        let next = self.publish(w, prev, plan)?;
        Ok(outcome(&next))
    }

    /// Restores the plan, metrics and trajectory from before the last mutation.
    pub fn undo(&self, w: &mut WriterState, expected: Option<u64>) -> Result<MutationOutcome, SessionError> {
        let cur = self.check_version(expected)?;
        let prev = w.undo.pop_back().ok_or_else(|| SessionError::Conflict("nothing to undo".into()))?;
        let restored = Arc::new(Snapshot { version: cur.version + 1, ..(*prev).clone() });
        *self.current.write() = restored.clone();
        Ok(outcome(&restored))
    }

    pub fn discuss(
        &self,
        w: &mut WriterState,
        sub_community: u32,
        expected: Option<u64>,
    ) -> Result<DiscussOutcome, SessionError> {
        if sub_community == 0 || sub_community > self.scenario.n_sub_communities {
            return Err(SessionError::NotFound(format!("no sub-community {sub_community}")));
        }
        let prev = self.check_version(expected)?;
        let (plan, opinions, revision) = discuss_sub_community(
            &self.scenario,
            &self.population,
            &prev.plan,
            sub_community,
            self.backend.as_ref(),
            &self.transcript,
            &self.config,
        )
        .map_err(pipeline_err)?;
        let changed = prev.plan.changed_from(&plan);
        let next = self.publish(w, prev, Plan { provenance: "sandbox".into(), ..plan })?;
        Ok(DiscussOutcome {
            version: next.version,
            sub_community,
            revision,
            opinions,
            changed,
            metrics: next.metrics.clone(),
            violations: next.violations.clone(),
        })
    }

    /// One resident's view of the current plan. Does not change the plan.
    pub fn ask(&self, resident_id: u32, question: Option<&str>) -> Result<Opinion, SessionError> {
        let resident = self
            .population
            .get(resident_id)
            .ok_or_else(|| SessionError::NotFound(format!("no resident {resident_id}")))?;
        let snap = self.snapshot();
        let facilities = Facilities::new(&self.scenario, &snap.plan);
        let req = OpineRequest { scenario: &self.scenario, resident, facilities: &facilities, question };
        let ex = self.backend.opine(&req).map_err(|e| SessionError::Agent(e.to_string()))?;
        self.transcript.commit(AgentRole::Resident, Some(resident_id), &ex);
        Ok(ex.payload)
    }

    pub fn transcript_after(&self, after: Option<u64>) -> Vec<TranscriptEntry> {
        self.transcript.after(after)
    }
}

fn outcome(s: &Snapshot) -> MutationOutcome {
    MutationOutcome { version: s.version, metrics: s.metrics.clone(), violations: s.violations.clone() }
}

fn pipeline_err(e: PipelineError) -> SessionError {
    match e {
        PipelineError::Agent { .. } => SessionError::Agent(e.to_string()),
        PipelineError::Config(m) => SessionError::BadRequest(m),
        other => SessionError::Internal(other.to_string()),
    }
}
