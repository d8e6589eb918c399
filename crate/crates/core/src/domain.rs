//! World model: land uses, plots, constraints, scenarios and plans.

use crate::geometry::{Point, Polygon};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

pub type PlotId = usize;

/// Declaration order is the canonical order used for iteration and tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LandUse {
    School,
    Hospital,
    Clinic,
    Business,
    Office,
    Recreation,
    Park,
    GreenSpace,
    Residential,
    RetainedGreen,
}

impl LandUse {
    pub const ASSIGNABLE: [LandUse; 8] = [
        LandUse::School,
        LandUse::Hospital,
        LandUse::Clinic,
        LandUse::Business,
        LandUse::Office,
        LandUse::Recreation,
        LandUse::Park,
        LandUse::GreenSpace,
    ];

    pub const ALL: [LandUse; 10] = [
        LandUse::School,
        LandUse::Hospital,
        LandUse::Clinic,
        LandUse::Business,
        LandUse::Office,
        LandUse::Recreation,
        LandUse::Park,
        LandUse::GreenSpace,
        LandUse::Residential,
        LandUse::RetainedGreen,
    ];

    pub fn is_assignable(self) -> bool {
        !matches!(self, LandUse::Residential | LandUse::RetainedGreen)
    }

    /// Position within [`LandUse::ASSIGNABLE`].
    pub fn assignable_index(self) -> Option<usize> {
        LandUse::ASSIGNABLE.iter().position(|&u| u == self)
    }

    /// Park, green space and retained green land.
    pub fn is_green(self) -> bool {
        matches!(self, LandUse::Park | LandUse::GreenSpace | LandUse::RetainedGreen)
    }

    pub fn label(self) -> &'static str {
        match self {
            LandUse::School => "school",
            LandUse::Hospital => "hospital",
            LandUse::Clinic => "clinic",
            LandUse::Business => "business",
            LandUse::Office => "office",
            LandUse::Recreation => "recreation",
            LandUse::Park => "park",
            LandUse::GreenSpace => "green space",
            LandUse::Residential => "residential",
            LandUse::RetainedGreen => "retained green",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LandUse::School => "School",
            LandUse::Hospital => "Hospital",
            LandUse::Clinic => "Clinic",
            LandUse::Business => "Business",
            LandUse::Office => "Office",
            LandUse::Recreation => "Recreation",
            LandUse::Park => "Park",
            LandUse::GreenSpace => "GreenSpace",
            LandUse::Residential => "Residential",
            LandUse::RetainedGreen => "RetainedGreen",
        }
    }
}

impl fmt::Display for LandUse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LandUse {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        LandUse::ALL
            .into_iter()
            .find(|u| u.name().to_ascii_lowercase() == key)
            .ok_or_else(|| DomainError::UnknownLandUse(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("unknown land use {0:?}")]
    UnknownLandUse(String),
    #[error("plot ids must be contiguous from 0; found {found} at position {position}")]
    NonContiguousIds { position: usize, found: PlotId },
    #[error("plot {plot_id} has sub-community {sub_community} outside 1..={n}")]
    SubCommunityOutOfRange { plot_id: PlotId, sub_community: u32, n: u32 },
    #[error("sub-community {0} has no plots")]
    EmptySubCommunity(u32),
    #[error("plot {plot_id} is fixed as {land_use}, which is not a fixed-only status")]
    BadFixedUse { plot_id: PlotId, land_use: LandUse },
    #[error("minimum for {0} given, but it is not an assignable land use")]
    MinimumOnFixedUse(LandUse),
    #[error("constraints need {required} plots but only {vacant} are vacant")]
    InfeasibleConstraints { required: u32, vacant: usize },
    #[error("unknown plot id {0}")]
    UnknownPlot(PlotId),
    #[error("plot {0} is fixed and cannot be assigned")]
    FixedPlot(PlotId),
    #[error("{land_use} cannot be assigned (plot {plot_id})")]
    NotAssignable { plot_id: PlotId, land_use: LandUse },
    #[error("invalid scenario template: {0}")]
    BadTemplate(String),
    #[error("invalid JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotStatus {
    Fixed(LandUse),
    Vacant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PlotRecord", try_from = "PlotRecord")]
pub struct Plot {
    pub id: PlotId,
    pub polygon: Polygon,
    pub status: PlotStatus,
    pub sub_community: u32,
    pub description: String,
}

impl Plot {
    pub fn is_vacant(&self) -> bool {
        self.status == PlotStatus::Vacant
    }

    pub fn fixed_use(&self) -> Option<LandUse> {
        match self.status {
            PlotStatus::Fixed(u) => Some(u),
            PlotStatus::Vacant => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PlotRecord {
    id: PlotId,
    polygon: Polygon,
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixed_use: Option<LandUse>,
    sub_community: u32,
    #[serde(default)]
    description: String,
}

impl From<Plot> for PlotRecord {
    fn from(p: Plot) -> Self {
        let (status, fixed_use) = match p.status {
            PlotStatus::Fixed(u) => ("fixed", Some(u)),
            PlotStatus::Vacant => ("vacant", None),
        };
        PlotRecord {
            id: p.id,
            polygon: p.polygon,
            status: status.into(),
            fixed_use,
            sub_community: p.sub_community,
            description: p.description,
        }
    }
}

impl TryFrom<PlotRecord> for Plot {
    type Error = String;

    fn try_from(r: PlotRecord) -> Result<Self, Self::Error> {
        let status = match (r.status.as_str(), r.fixed_use) {
            ("vacant", None) => PlotStatus::Vacant,
            ("fixed", Some(u)) => PlotStatus::Fixed(u),
            ("fixed", None) => return Err(format!("plot {}: fixed plot without fixed_use", r.id)),
            ("vacant", Some(_)) => return Err(format!("plot {}: vacant plot with fixed_use", r.id)),
            (other, _) => return Err(format!("plot {}: unknown status {other:?}", r.id)),
        };
        Ok(Plot { id: r.id, polygon: r.polygon, status, sub_community: r.sub_community, description: r.description })
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    pub min_count: BTreeMap<LandUse, u32>,
    /// Park and GreenSpace minimums are checked against their combined count.
    #[serde(default = "yes")]
    pub park_green_joint: bool,
    /// Fixed retained-green plots count toward park/green minimums.
    #[serde(default = "yes")]
    pub fixed_green_counts: bool,
}

impl Default for Constraints {
    fn default() -> Self {
        Self { min_count: BTreeMap::new(), park_green_joint: true, fixed_green_counts: true }
    }
}

/// One checkable minimum: the combined count of `members` must reach `need`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Requirement {
    /// Land use that names the requirement in violations.
    pub lead: LandUse,
    pub members: Vec<LandUse>,
    pub need: u32,
}

impl Requirement {
    pub fn contains(&self, u: LandUse) -> bool {
        self.members.contains(&u)
    }
}

impl Constraints {
    pub fn minimum(&self, u: LandUse) -> u32 {
        self.min_count.get(&u).copied().unwrap_or(0)
    }

    pub fn total_minimum(&self) -> u32 {
        self.min_count.values().sum()
    }

    /// Requirements in land-use order; zero minimums are omitted.
    pub fn requirements(&self) -> Vec<Requirement> {
        let mut out = Vec::new();
        for u in LandUse::ASSIGNABLE {
            if self.park_green_joint && u == LandUse::GreenSpace {
                continue;
            }
            let req = if self.park_green_joint && u == LandUse::Park {
                Requirement {
                    lead: u,
                    members: vec![LandUse::Park, LandUse::GreenSpace],
                    need: self.minimum(LandUse::Park) + self.minimum(LandUse::GreenSpace),
                }
            } else {
                Requirement { lead: u, members: vec![u], need: self.minimum(u) }
            };
            if req.need > 0 {
                out.push(req);
            }
        }
        out
    }

    /// The requirement that `u` participates in, if any.
    pub fn requirement_for(&self, u: LandUse) -> Option<Requirement> {
        self.requirements().into_iter().find(|r| r.contains(u))
    }

    /// Effective count of a requirement given full per-use counts.
    pub fn effective_count(&self, req: &Requirement, counts: &BTreeMap<LandUse, u32>) -> u32 {
        let mut have: u32 = req.members.iter().map(|m| counts.get(m).copied().unwrap_or(0)).sum();
        if self.fixed_green_counts && req.members.iter().any(|m| m.is_green()) {
            have += counts.get(&LandUse::RetainedGreen).copied().unwrap_or(0);
        }
        have
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    #[serde(default)]
    pub area_km2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residents: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elderly_share: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bachelor_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub center: Point,
    pub n_sub_communities: u32,
    pub constraints: Constraints,
    pub plots: Vec<Plot>,
    #[serde(default)]
    pub metadata: ScenarioMetadata,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), DomainError> {
        for (i, p) in self.plots.iter().enumerate() {
            if p.id != i {
                return Err(DomainError::NonContiguousIds { position: i, found: p.id });
            }
            if p.sub_community == 0 || p.sub_community > self.n_sub_communities {
                return Err(DomainError::SubCommunityOutOfRange {
                    plot_id: p.id,
                    sub_community: p.sub_community,
                    n: self.n_sub_communities,
                });
            }
            if let PlotStatus::Fixed(u) = p.status {
                if u.is_assignable() {
                    return Err(DomainError::BadFixedUse { plot_id: p.id, land_use: u });
                }
            }
        }
        let present: BTreeSet<u32> = self.plots.iter().map(|p| p.sub_community).collect();
        if let Some(sc) = (1..=self.n_sub_communities).find(|sc| !present.contains(sc)) {
            return Err(DomainError::EmptySubCommunity(sc));
        }
        if let Some(&u) = self.constraints.min_count.keys().find(|u| !u.is_assignable()) {
            return Err(DomainError::MinimumOnFixedUse(u));
        }
        let vacant = self.vacant_ids().count();
        let required = self.constraints.total_minimum();
        if required as usize > vacant {
            return Err(DomainError::InfeasibleConstraints { required, vacant });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| DomainError::Json(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn plot(&self, id: PlotId) -> Option<&Plot> {
        self.plots.get(id)
    }

    pub fn vacant_ids(&self) -> impl Iterator<Item = PlotId> + '_ {
        self.plots.iter().filter(|p| p.is_vacant()).map(|p| p.id)
    }

    pub fn residential_plots(&self) -> impl Iterator<Item = &Plot> {
        self.plots.iter().filter(|p| p.status == PlotStatus::Fixed(LandUse::Residential))
    }

    pub fn plots_in(&self, sub_community: u32) -> impl Iterator<Item = &Plot> {
        self.plots.iter().filter(move |p| p.sub_community == sub_community)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub provenance: String,
    pub revision_step: u32,
    pub assignment: BTreeMap<PlotId, LandUse>,
}

impl Plan {
    pub fn new(provenance: impl Into<String>, assignment: BTreeMap<PlotId, LandUse>) -> Self {
        Self { provenance: provenance.into(), revision_step: 0, assignment }
    }

    pub fn get(&self, id: PlotId) -> Option<LandUse> {
        self.assignment.get(&id).copied()
    }

    /// Land use of any plot: the fixed status or the planned assignment.
    pub fn use_of(&self, scenario: &Scenario, id: PlotId) -> Option<LandUse> {
        scenario.plot(id).and_then(|p| p.fixed_use().or_else(|| self.get(id)))
    }

    /// Copy with reassignments applied. Fails without side effects on a
    /// fixed, unknown or non-assignable target.
    pub fn apply(&self, scenario: &Scenario, changes: &[(PlotId, LandUse)]) -> Result<Plan, DomainError> {
        let mut next = self.clone();
        for &(id, u) in changes {
            let plot = scenario.plot(id).ok_or(DomainError::UnknownPlot(id))?;
            if !plot.is_vacant() {
                return Err(DomainError::FixedPlot(id));
            }
            if !u.is_assignable() {
                return Err(DomainError::NotAssignable { plot_id: id, land_use: u });
            }
            next.assignment.insert(id, u);
        }
        Ok(next)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        serde_json::from_str(text).map_err(|e| DomainError::Json(e.to_string()))
    }

    /// Plot ids whose land use differs between the two plans.
    pub fn changed_from(&self, other: &Plan) -> BTreeSet<PlotId> {
        let keys: BTreeSet<PlotId> = self.assignment.keys().chain(other.assignment.keys()).copied().collect();
        keys.into_iter().filter(|k| self.get(*k) != other.get(*k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Unmet minimum. Under a joint park/green constraint `land_use` is Park
    /// and the counts are combined.
    Shortfall { land_use: LandUse, have: u32, need: u32 },
    Unassigned { plot_id: PlotId },
    UnknownPlot { plot_id: PlotId },
    FixedPlot { plot_id: PlotId },
    NotAssignable { plot_id: PlotId, land_use: LandUse },
}

impl Violation {
    pub fn is_structural(&self) -> bool {
        !matches!(self, Violation::Shortfall { .. })
    }

    pub fn deficit(&self) -> u32 {
        match *self {
            Violation::Shortfall { have, need, .. } => need.saturating_sub(have),
            _ => 0,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shortfall { land_use, have, need } => {
                write!(f, "{land_use}: {have} plots planned, at least {need} required")
            }
            Violation::Unassigned { plot_id } => write!(f, "plot {plot_id} has no land use"),
            Violation::UnknownPlot { plot_id } => write!(f, "plot {plot_id} does not exist"),
            Violation::FixedPlot { plot_id } => write!(f, "plot {plot_id} is fixed and cannot be planned"),
            Violation::NotAssignable { plot_id, land_use } => {
                write!(f, "plot {plot_id} cannot be {land_use}")
            }
        }
    }
}

pub fn total_deficit(violations: &[Violation]) -> u32 {
    violations.iter().map(Violation::deficit).sum()
}

/// Per-use plot counts over the whole scenario, fixed plots included.
pub fn plot_counts(scenario: &Scenario, plan: &Plan) -> Result<BTreeMap<LandUse, u32>, DomainError> {
    let mut counts: BTreeMap<LandUse, u32> = LandUse::ALL.iter().map(|&u| (u, 0)).collect();
    for (&id, &u) in &plan.assignment {
        let plot = scenario.plot(id).ok_or(DomainError::UnknownPlot(id))?;
        if !plot.is_vacant() {
            return Err(DomainError::FixedPlot(id));
        }
        *counts.entry(u).or_default() += 1;
    }
    for p in &scenario.plots {
        if let Some(u) = p.fixed_use() {
            *counts.entry(u).or_default() += 1;
        }
    }
    Ok(counts)
}

/// Structural problems first (ascending plot id), then unmet minimums in
/// land-use order. Empty iff the plan is feasible.
pub fn validate_plan(scenario: &Scenario, plan: &Plan) -> Vec<Violation> {
    let mut out = Vec::new();
    for (&id, &u) in &plan.assignment {
        match scenario.plot(id) {
            None => out.push(Violation::UnknownPlot { plot_id: id }),
            Some(p) if !p.is_vacant() => out.push(Violation::FixedPlot { plot_id: id }),
            Some(_) if !u.is_assignable() => out.push(Violation::NotAssignable { plot_id: id, land_use: u }),
            Some(_) => {}
        }
    }
    for id in scenario.vacant_ids() {
        if !plan.assignment.contains_key(&id) {
            out.push(Violation::Unassigned { plot_id: id });
        }
    }
    out.sort_by_key(|v| match *v {
        Violation::UnknownPlot { plot_id }
        | Violation::FixedPlot { plot_id }
        | Violation::NotAssignable { plot_id, .. }
        | Violation::Unassigned { plot_id } => plot_id,
        Violation::Shortfall { .. } => usize::MAX,
    });

    let mut counts: BTreeMap<LandUse, u32> = LandUse::ALL.iter().map(|&u| (u, 0)).collect();
    for (&id, &u) in &plan.assignment {
        if scenario.plot(id).is_some_and(Plot::is_vacant) {
            *counts.entry(u).or_default() += 1;
        }
    }
    for p in &scenario.plots {
        if let Some(u) = p.fixed_use() {
            *counts.entry(u).or_default() += 1;
        }
    }
    for req in scenario.constraints.requirements() {
        let have = scenario.constraints.effective_count(&req, &counts);
        if have < req.need {
            out.push(Violation::Shortfall { land_use: req.lead, have, need: req.need });
        }
    }
    out
}
