//! Chief planner, sub-community planners and residents behind one backend
//! trait, with a scripted and an LLM implementation.

mod llm;
pub mod payload;
pub mod prompts;
mod scripted;
pub mod transcript;

pub use llm::LlmBackend;
pub use payload::{
    parse_payload, render_message, ActionPayload, DiscussionSummary, NeedDeclaration, Opinion, ParseError, PayloadKind,
    PlanProposal, PlanRevision, PlotChange, ToPayload,
};
pub use prompts::{PromptError, PromptSet};
pub use scripted::ScriptedBackend;
pub use transcript::{AgentRole, Direction, Transcript, TranscriptEntry};

use crate::domain::{plot_counts, total_deficit, validate_plan, Constraints, DomainError, LandUse, Plan, PlotId, Scenario, Violation};
use crate::exec::Execution;
use crate::metrics::Facilities;
use crate::planners::PlannerError;
use crate::population::{Population, Resident, ResidentProfile};
use agora_llm::{LlmError, TokenUsage, UsageSummary};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Llm,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "scripted" => Ok(BackendKind::Scripted),
            "llm" => Ok(BackendKind::Llm),
            _ => Err(format!("unknown backend {s:?} (expected scripted or llm)")),
        }
    }
}

/// One prompt and its response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub prompt: String,
    pub response: String,
    pub usage: Option<TokenUsage>,
}

impl Turn {
    pub fn new(prompt: impl Into<String>, response: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), response: response.into(), usage: None }
    }
}

/// Result of one agent action: the conversation and what was extracted.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange<T> {
    pub turns: Vec<Turn>,
    pub payload: T,
}

pub struct NeedsRequest<'a> {
    pub profile: &'a ResidentProfile,
}

pub struct ProposeRequest<'a> {
    pub scenario: &'a Scenario,
    pub population: &'a Population,
    pub seed: u64,
    pub execution: Execution,
}

pub struct OpineRequest<'a> {
    pub scenario: &'a Scenario,
    pub resident: &'a Resident,
    pub facilities: &'a Facilities<'a>,
    /// Free-form question from a human planner.
    pub question: Option<&'a str>,
}

pub struct DiscussRequest<'a> {
    pub scenario: &'a Scenario,
    pub plan: &'a Plan,
    pub sub_community: u32,
    pub opinions: &'a [Opinion],
    pub max_changes: usize,
}

pub struct FeedbackRequest<'a> {
    pub scenario: &'a Scenario,
    pub plan: &'a Plan,
    pub violations: &'a [Violation],
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("unusable response after {attempts} attempt(s): {error}")]
    Parse { attempts: u32, error: ParseError },
    #[error("response rejected after {attempts} attempt(s): {reason}")]
    Rejected { attempts: u32, reason: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

pub trait AgentBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn elicit_needs(&self, req: &NeedsRequest) -> Result<Exchange<crate::population::NeedSet>, AgentError>;

    /// Chief planner's full proposal for every vacant plot.
    fn propose(&self, req: &ProposeRequest) -> Result<Exchange<PlanProposal>, AgentError>;

    fn opine(&self, req: &OpineRequest) -> Result<Exchange<Opinion>, AgentError>;

    /// Sub-community planner's revision after hearing opinions.
    fn discuss(&self, req: &DiscussRequest) -> Result<Exchange<PlanRevision>, AgentError>;

    /// Chief planner's revision answering constraint violations.
    fn feedback(&self, req: &FeedbackRequest) -> Result<Exchange<PlanRevision>, AgentError>;

    fn model(&self) -> Option<String> {
        None
    }

    fn usage(&self) -> Option<UsageSummary> {
        None
    }
}

/// How far each land use is above its minimum. Uses without a minimum
/// report their plot count; a joint park/green group reports the group
/// surplus for both members.
pub fn surplus_by_use(scenario: &Scenario, plan: &Plan) -> Result<BTreeMap<LandUse, i64>, DomainError> {
    let counts = plot_counts(scenario, plan)?;
    let c = &scenario.constraints;
    Ok(LandUse::ASSIGNABLE
        .iter()
        .map(|&u| {
            let s = match c.requirement_for(u) {
                Some(req) => c.effective_count(&req, &counts) as i64 - req.need as i64,
                None => counts.get(&u).copied().unwrap_or(0) as i64,
            };
            (u, s)
        })
        .collect())
}

/// Unmet needs of a resident: needed uses with nothing within the service
/// radius.
pub fn unmet_needs(resident: &Resident, facilities: &Facilities) -> Vec<(LandUse, Option<(PlotId, f64)>)> {
    let Some(needs) = &resident.needs else { return Vec::new() };
    needs
        .needs()
        .iter()
        .map(|&u| (u, facilities.nearest(resident.profile.home, u)))
        .filter(|(_, near)| !near.is_some_and(|(_, d)| crate::metrics::accessible(d)))
        .collect()
}

/// Residents per unmet land use, most frequent first, ties in land-use order.
pub fn demand_ranking(opinions: &[Opinion]) -> Vec<(LandUse, u32)> {
    let mut counts: BTreeMap<LandUse, u32> = BTreeMap::new();
    for o in opinions {
        for &u in o.unmet.iter().collect::<BTreeSet<_>>() {
            *counts.entry(u).or_default() += 1;
        }
    }
    let mut ranked: Vec<(LandUse, u32)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Checks shared by both backends on a sub-community revision.
pub fn check_sp_revision(req: &DiscussRequest, rev: &PlanRevision) -> Result<(), String> {
    if rev.changes.len() > req.max_changes {
        return Err(format!("{} changes proposed, at most {} allowed", rev.changes.len(), req.max_changes));
    }
    let mut seen = BTreeSet::new();
    for c in &rev.changes {
        let plot = req.scenario.plot(c.plot_id).ok_or_else(|| format!("plot {} does not exist", c.plot_id))?;
        if !plot.is_vacant() {
            return Err(format!("plot {} is fixed and cannot be changed", c.plot_id));
        }
        if plot.sub_community != req.sub_community {
            return Err(format!("plot {} lies outside sub-community {}", c.plot_id, req.sub_community));
        }
        if !c.land_use.is_assignable() {
            return Err(format!("{} is not an assignable land use", c.land_use));
        }
        if !seen.insert(c.plot_id) {
            return Err(format!("plot {} is changed twice", c.plot_id));
        }
    }
    Ok(())
}

/// A feedback revision must strictly reduce the total deficit.
pub fn check_feedback_revision(req: &FeedbackRequest, rev: &PlanRevision) -> Result<(), String> {
    let next = req.plan.apply(req.scenario, &rev.pairs()).map_err(|e| e.to_string())?;
    let before = total_deficit(req.violations);
    let after = total_deficit(&validate_plan(req.scenario, &next));
    if after < before {
        Ok(())
    } else {
        Err(format!("the revision leaves the total shortfall at {after} (was {before}); it must go down"))
    }
}

pub fn land_use_list() -> String {
    LandUse::ASSIGNABLE.iter().map(|u| u.name()).collect::<Vec<_>>().join(", ")
}

pub fn constraint_list(c: &Constraints) -> String {
    let mut out = String::new();
    for req in c.requirements() {
        let names: Vec<&str> = req.members.iter().map(|u| u.name()).collect();
        let _ = writeln!(out, "- {}: at least {}", names.join(" or "), req.need);
    }
    if c.fixed_green_counts {
        out.push_str("- retained green plots count toward park and green space requirements\n");
    }
    out
}

/// Natural-language statement of each violation.
pub fn violation_list(violations: &[Violation]) -> String {
    let mut out = String::new();
    for v in violations {
        let _ = match v {
            Violation::Shortfall { land_use, have, need } => writeln!(
                out,
                "- The plan contains {have} {} plot(s), but at least {need} are required ({} short).",
                land_use.name(),
                need - have
            ),
            other => writeln!(out, "- {other}."),
        };
    }
    out
}

/// One line per plot: id, sub-community, status, current use, area and
/// description. `only` restricts to one sub-community.
pub fn plot_table(scenario: &Scenario, plan: Option<&Plan>, only: Option<u32>) -> String {
    let mut out = String::new();
    for p in scenario.plots.iter().filter(|p| only.is_none_or(|sc| p.sub_community == sc)) {
        let status = match p.fixed_use() {
            Some(u) => format!("fixed {}", u.name()),
            None => "vacant".to_string(),
        };
        let current = plan.and_then(|pl| pl.get(p.id)).map_or("-", |u| u.name());
        let _ = writeln!(
            out,
            "{} | {} | {} | {} | {:.0} | {}",
            p.id,
            p.sub_community,
            status,
            current,
            p.polygon.area(),
            p.description
        );
    }
    out
}
