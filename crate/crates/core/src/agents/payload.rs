//! Structured payloads exchanged with agents, embedded in prose as a single
//! fenced JSON block.

use crate::domain::{LandUse, PlotId, Scenario};
use crate::population::NeedSet;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedDeclaration {
    pub needs: Vec<LandUse>,
    #[serde(default)]
    pub rationales: BTreeMap<LandUse, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opinion {
    pub agent_id: u32,
    /// Needed land uses with no plot within the service radius.
    pub unmet: Vec<LandUse>,
    pub text: String,
    #[serde(default)]
    pub plot_ids: Vec<PlotId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotChange {
    pub plot_id: PlotId,
    pub land_use: LandUse,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanProposal {
    pub assignments: Vec<PlotChange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlanRevision {
    pub changes: Vec<PlotChange>,
}

impl PlanRevision {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn pairs(&self) -> Vec<(PlotId, LandUse)> {
        self.changes.iter().map(|c| (c.plot_id, c.land_use)).collect()
    }
}

impl PlanProposal {
    pub fn pairs(&self) -> Vec<(PlotId, LandUse)> {
        self.assignments.iter().map(|c| (c.plot_id, c.land_use)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscussionSummary {
    pub text: String,
    /// Residents reporting each land use as unmet.
    #[serde(default)]
    pub demands: BTreeMap<LandUse, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionPayload {
    NeedDeclaration(NeedDeclaration),
    Opinion(Opinion),
    PlanProposal(PlanProposal),
    PlanRevision(PlanRevision),
    DiscussionSummary(DiscussionSummary),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    NeedDeclaration,
    Opinion,
    PlanProposal,
    PlanRevision,
    DiscussionSummary,
}

impl PayloadKind {
    pub fn tag(self) -> &'static str {
        match self {
            PayloadKind::NeedDeclaration => "need_declaration",
            PayloadKind::Opinion => "opinion",
            PayloadKind::PlanProposal => "plan_proposal",
            PayloadKind::PlanRevision => "plan_revision",
            PayloadKind::DiscussionSummary => "discussion_summary",
        }
    }
}

impl ActionPayload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            ActionPayload::NeedDeclaration(_) => PayloadKind::NeedDeclaration,
            ActionPayload::Opinion(_) => PayloadKind::Opinion,
            ActionPayload::PlanProposal(_) => PayloadKind::PlanProposal,
            ActionPayload::PlanRevision(_) => PayloadKind::PlanRevision,
            ActionPayload::DiscussionSummary(_) => PayloadKind::DiscussionSummary,
        }
    }

    fn plot_refs(&self) -> Vec<PlotId> {
        match self {
            ActionPayload::Opinion(o) => o.plot_ids.clone(),
            ActionPayload::PlanProposal(p) => p.assignments.iter().map(|c| c.plot_id).collect(),
            ActionPayload::PlanRevision(r) => r.changes.iter().map(|c| c.plot_id).collect(),
            _ => Vec::new(),
        }
    }

    fn land_uses(&self) -> Vec<LandUse> {
        match self {
            ActionPayload::NeedDeclaration(d) => d.needs.iter().chain(d.rationales.keys()).copied().collect(),
            ActionPayload::Opinion(o) => o.unmet.clone(),
            ActionPayload::PlanProposal(p) => p.assignments.iter().map(|c| c.land_use).collect(),
            ActionPayload::PlanRevision(r) => r.changes.iter().map(|c| c.land_use).collect(),
            ActionPayload::DiscussionSummary(s) => s.demands.keys().copied().collect(),
        }
    }

    /// Pretty JSON of the tagged payload.
    pub fn to_block(&self) -> String {
        serde_json::to_string_pretty(self).expect("payloads serialize")
    }
}

/// Something that can be recorded as a payload in the transcript.
pub trait ToPayload {
    fn to_payload(&self) -> ActionPayload;
}

impl ToPayload for ActionPayload {
    fn to_payload(&self) -> ActionPayload {
        self.clone()
    }
}

impl ToPayload for NeedSet {
    fn to_payload(&self) -> ActionPayload {
        ActionPayload::NeedDeclaration(NeedDeclaration { needs: self.needs().to_vec(), rationales: self.rationales.clone() })
    }
}

impl ToPayload for Opinion {
    fn to_payload(&self) -> ActionPayload {
        ActionPayload::Opinion(self.clone())
    }
}

impl ToPayload for PlanProposal {
    fn to_payload(&self) -> ActionPayload {
        ActionPayload::PlanProposal(self.clone())
    }
}

impl ToPayload for PlanRevision {
    fn to_payload(&self) -> ActionPayload {
        ActionPayload::PlanRevision(self.clone())
    }
}

impl ToPayload for DiscussionSummary {
    fn to_payload(&self) -> ActionPayload {
        ActionPayload::DiscussionSummary(self.clone())
    }
}

impl ToPayload for String {
    fn to_payload(&self) -> ActionPayload {
        ActionPayload::DiscussionSummary(DiscussionSummary { text: self.clone(), demands: BTreeMap::new() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no fenced block found in the response")]
    NoBlock,
    #[error("the last fenced block is not closed (response truncated?)")]
    Truncated,
    #[error("malformed block: {0}")]
    Malformed(String),
    #[error("expected a {expected} block, found {found}")]
    WrongKind { expected: &'static str, found: &'static str },
    #[error("plot {0} does not exist")]
    UnknownPlot(PlotId),
    #[error("plot {0} is fixed and cannot be assigned")]
    FixedPlot(PlotId),
    #[error("{0} is not an assignable land use")]
    NotAssignable(LandUse),
}

/// Surround the rendered block with prose.
pub fn render_message(prose: &str, payload: &ActionPayload) -> String {
    format!("{prose}\n\n```json\n{}\n```\n", payload.to_block())
}

/// Body of the last closed fenced block.
pub fn last_block(text: &str) -> Result<&str, ParseError> {
    let mut last: Option<&str> = None;
    let mut open: Option<usize> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        if !line.trim_start().starts_with("```") {
            continue;
        }
        match open {
            None => open = Some(offset),
            Some(body) => {
                last = Some(&text[body..start]);
                open = None;
            }
        }
    }
    match (open, last) {
        (Some(_), _) => Err(ParseError::Truncated),
        (None, Some(b)) => Ok(b),
        (None, None) => Err(ParseError::NoBlock),
    }
}

/// Parse the last fenced block of `text`. When `expected` is given, a block
/// without a `type` tag is read as that kind. With a scenario, plot ids and
/// land uses are validated against it.
pub fn parse_payload(text: &str, expected: Option<PayloadKind>, scenario: Option<&Scenario>) -> Result<ActionPayload, ParseError> {
    let block = last_block(text)?;
    let mut value: serde_json::Value = serde_json::from_str(block).map_err(|e| ParseError::Malformed(e.to_string()))?;
    let obj = value.as_object_mut().ok_or_else(|| ParseError::Malformed("block is not a JSON object".into()))?;
    if let Some(kind) = expected {
        obj.entry("type").or_insert_with(|| kind.tag().into());
    }
    let payload: ActionPayload = serde_json::from_value(value).map_err(|e| ParseError::Malformed(e.to_string()))?;
    if let Some(kind) = expected {
        if payload.kind() != kind {
            return Err(ParseError::WrongKind { expected: kind.tag(), found: payload.kind().tag() });
        }
    }
    if let Some(u) = payload.land_uses().into_iter().find(|u| !u.is_assignable()) {
        return Err(ParseError::NotAssignable(u));
    }
    if let Some(s) = scenario {
        let assigns = matches!(payload, ActionPayload::PlanProposal(_) | ActionPayload::PlanRevision(_));
        for id in payload.plot_refs() {
            let plot = s.plot(id).ok_or(ParseError::UnknownPlot(id))?;
            if assigns && !plot.is_vacant() {
                return Err(ParseError::FixedPlot(id));
            }
        }
    }
    Ok(payload)
}
