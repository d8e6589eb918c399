//! Synthetic residents: demographic sampling, home placement and need sets.

use crate::agents::{AgentBackend, AgentError, NeedsRequest, Transcript};
use crate::domain::{LandUse, PlotId, Scenario};
use crate::exec::{self, Execution};
use crate::geometry::{point_in_polygon, Point};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Education {
    BelowBachelor,
    BachelorPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VulnerableGroup {
    FamilyWithChildren,
    FamilyWithPatient,
    ElderlyAlone,
    RentalMigrant,
}

impl VulnerableGroup {
    pub const ALL: [VulnerableGroup; 4] = [
        VulnerableGroup::FamilyWithChildren,
        VulnerableGroup::FamilyWithPatient,
        VulnerableGroup::ElderlyAlone,
        VulnerableGroup::RentalMigrant,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VulnerableGroup::FamilyWithChildren => "family with children",
            VulnerableGroup::FamilyWithPatient => "family with a patient",
            VulnerableGroup::ElderlyAlone => "elderly person living alone",
            VulnerableGroup::RentalMigrant => "rental migrant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidentProfile {
    pub id: u32,
    pub gender: Gender,
    pub age: u32,
    pub family_size: u32,
    pub education: Education,
    pub employed: bool,
    pub vulnerable: BTreeSet<VulnerableGroup>,
    pub home: Point,
    pub home_plot: PlotId,
}

impl ResidentProfile {
    pub fn is_vulnerable(&self) -> bool {
        !self.vulnerable.is_empty()
    }

    /// One-line natural-language description used in prompts.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "a {}-year-old {}, household of {}, {}, {}",
            self.age,
            match self.gender {
                Gender::Female => "woman",
                Gender::Male => "man",
            },
            self.family_size,
            match self.education {
                Education::BelowBachelor => "education below bachelor's degree",
                Education::BachelorPlus => "holds a bachelor's degree or higher",
            },
            if self.employed { "employed" } else { "not employed" },
        );
        for g in &self.vulnerable {
            s.push_str("; ");
            s.push_str(g.label());
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeedSource {
    Scripted,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NeedSetError {
    #[error("need set is empty")]
    Empty,
    #[error("need set lists {0} more than once")]
    Duplicate(LandUse),
    #[error("{0} is not an assignable land use")]
    NotAssignable(LandUse),
    #[error("elicited need sets must list 3 to 5 land uses, got {0}")]
    BadSize(usize),
}

/// Frozen list of needed land uses, in priority order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedSet {
    needs: Vec<LandUse>,
    pub source: NeedSource,
    pub rationales: BTreeMap<LandUse, String>,
}

impl NeedSet {
    /// Any non-empty set of distinct assignable uses. Elicitation
    /// additionally enforces 3 to 5 entries via [`NeedSet::elicited`].
    pub fn new(needs: Vec<LandUse>, source: NeedSource, rationales: BTreeMap<LandUse, String>) -> Result<Self, NeedSetError> {
        if needs.is_empty() {
            return Err(NeedSetError::Empty);
        }
        let mut seen = BTreeSet::new();
        for &u in &needs {
            if !u.is_assignable() {
                return Err(NeedSetError::NotAssignable(u));
            }
            if !seen.insert(u) {
                return Err(NeedSetError::Duplicate(u));
            }
        }
        Ok(Self { needs, source, rationales })
    }

    pub fn elicited(needs: Vec<LandUse>, source: NeedSource, rationales: BTreeMap<LandUse, String>) -> Result<Self, NeedSetError> {
        if !(3..=5).contains(&needs.len()) {
            return Err(NeedSetError::BadSize(needs.len()));
        }
        Self::new(needs, source, rationales)
    }

    pub fn needs(&self) -> &[LandUse] {
        &self.needs
    }

    pub fn contains(&self, u: LandUse) -> bool {
        self.needs.contains(&u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resident {
    pub profile: ResidentProfile,
    pub needs: Option<NeedSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DemographicSummary {
    pub base_agents: u32,
    pub vulnerable_agents: u32,
    /// Share of base agents older than 60.
    pub elderly_share: f64,
    pub bachelor_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub seed: u64,
    pub demographic_summary: DemographicSummary,
    #[serde(with = "agent_records")]
    pub agents: Vec<Resident>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PopulationError {
    #[error("scenario has no residential plot to place homes in")]
    NoResidentialPlot,
    #[error("population size must be at least 1")]
    Empty,
    #[error("invalid demographic statistics: {0}")]
    BadStats(String),
    #[error("need elicitation failed for agents {failed:?}: {first_error}")]
    PartialElicitation { failed: Vec<u32>, first_error: String },
    #[error("invalid population file: {0}")]
    Json(String),
}

/// Sampling distributions for base residents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicStats {
    /// Probability of age above 60.
    pub elderly_share: f64,
    pub bachelor_share: f64,
    pub male_share: f64,
    /// Employment probability for residents aged 60 or younger.
    pub employment_rate: f64,
    /// Weights for household sizes 1, 2, 3 and 4+.
    pub family_size_weights: [f64; 4],
    pub working_age: (u32, u32),
    pub elderly_age: (u32, u32),
}

impl DemographicStats {
    pub fn hlg() -> Self {
        Self { elderly_share: 0.1638, bachelor_share: 0.4888, ..Self::base() }
    }

    pub fn dhm() -> Self {
        Self { elderly_share: 0.2423, bachelor_share: 0.3154, ..Self::base() }
    }

    fn base() -> Self {
        Self {
            elderly_share: 0.2,
            bachelor_share: 0.4,
            male_share: 0.5,
            employment_rate: 0.8,
            family_size_weights: [0.25, 0.30, 0.30, 0.15],
            working_age: (18, 60),
            elderly_age: (61, 90),
        }
    }

    pub fn for_template(name: &str) -> Option<Self> {
        match name {
            "hlg" => Some(Self::hlg()),
            "dhm" => Some(Self::dhm()),
            _ => None,
        }
    }

    fn check(&self) -> Result<(), PopulationError> {
        let probs = [self.elderly_share, self.bachelor_share, self.male_share, self.employment_rate];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(PopulationError::BadStats("probabilities must lie in [0, 1]".into()));
        }
        if self.family_size_weights.iter().any(|w| *w < 0.0) || self.family_size_weights.iter().sum::<f64>() <= 0.0 {
            return Err(PopulationError::BadStats("family size weights must be non-negative and not all zero".into()));
        }
        if self.working_age.0 > self.working_age.1 || self.elderly_age.0 > self.elderly_age.1 || self.elderly_age.0 <= 60 {
            return Err(PopulationError::BadStats("age ranges must be ordered and elderly ages above 60".into()));
        }
        Ok(())
    }
}

struct HomeSampler<'a> {
    plots: Vec<&'a crate::domain::Plot>,
    weights: WeightedIndex<f64>,
}

impl<'a> HomeSampler<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self, PopulationError> {
        let plots: Vec<_> = scenario.residential_plots().collect();
        if plots.is_empty() {
            return Err(PopulationError::NoResidentialPlot);
        }
        let weights = WeightedIndex::new(plots.iter().map(|p| p.polygon.area())).map_err(|_| PopulationError::NoResidentialPlot)?;
        Ok(Self { plots, weights })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (Point, PlotId) {
        let plot = self.plots[self.weights.sample(rng)];
        let (lo, hi) = plot.polygon.bbox();
        loop {
            let p = Point::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
            if point_in_polygon(p, &plot.polygon) {
                return (p, plot.id);
            }
        }
    }
}

fn family_size(stats: &DemographicStats, rng: &mut ChaCha8Rng) -> u32 {
    let idx = WeightedIndex::new(stats.family_size_weights).expect("checked weights").sample(rng);
    match idx {
        0..=2 => idx as u32 + 1,
        _ => rng.random_range(4..=6),
    }
}

fn base_profile(id: u32, stats: &DemographicStats, homes: &HomeSampler, rng: &mut ChaCha8Rng) -> ResidentProfile {
    let elderly = rng.random_bool(stats.elderly_share);
    let age = if elderly {
        rng.random_range(stats.elderly_age.0..=stats.elderly_age.1)
    } else {
        rng.random_range(stats.working_age.0..=stats.working_age.1)
    };
    let gender = if rng.random_bool(stats.male_share) { Gender::Male } else { Gender::Female };
    let education = if rng.random_bool(stats.bachelor_share) { Education::BachelorPlus } else { Education::BelowBachelor };
    let employed = !elderly && rng.random_bool(stats.employment_rate);
    let family_size = family_size(stats, rng);
    let (home, home_plot) = homes.sample(rng);
    ResidentProfile { id, gender, age, family_size, education, employed, vulnerable: BTreeSet::new(), home, home_plot }
}

fn vulnerable_profile(
    id: u32,
    group: VulnerableGroup,
    stats: &DemographicStats,
    homes: &HomeSampler,
    rng: &mut ChaCha8Rng,
) -> ResidentProfile {
    let (age, family_size, employed) = match group {
        VulnerableGroup::FamilyWithChildren => {
            (rng.random_range(28..=50), rng.random_range(3..=5), rng.random_bool(stats.employment_rate))
        }
        VulnerableGroup::FamilyWithPatient => {
            let age = rng.random_range(30..=70);
            (age, rng.random_range(2..=5), age <= 60 && rng.random_bool(stats.employment_rate))
        }
        VulnerableGroup::ElderlyAlone => (rng.random_range(65..=90), 1, false),
        VulnerableGroup::RentalMigrant => (rng.random_range(20..=45), rng.random_range(1..=3), true),
    };
    let gender = if rng.random_bool(stats.male_share) { Gender::Male } else { Gender::Female };
    let education = if rng.random_bool(stats.bachelor_share) { Education::BachelorPlus } else { Education::BelowBachelor };
    let (home, home_plot) = homes.sample(rng);
    ResidentProfile {
        id,
        gender,
        age,
        family_size,
        education,
        employed,
        vulnerable: BTreeSet::from([group]),
        home,
        home_plot,
    }
}

/// `n` base residents followed by `n_vulnerable_each` residents of each
/// vulnerable group. Needs are left unset.
pub fn synthesize(
    scenario: &Scenario,
    stats: &DemographicStats,
    n: u32,
    n_vulnerable_each: u32,
    seed: u64,
) -> Result<Population, PopulationError> {
    if n == 0 {
        return Err(PopulationError::Empty);
    }
    stats.check()?;
    let homes = HomeSampler::new(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = Vec::with_capacity((n + 4 * n_vulnerable_each) as usize);
    for id in 0..n {
        agents.push(base_profile(id, stats, &homes, &mut rng));
    }
    let mut id = n;
    for group in VulnerableGroup::ALL {
        for _ in 0..n_vulnerable_each {
            agents.push(vulnerable_profile(id, group, stats, &homes, &mut rng));
            id += 1;
        }
    }
    let base = &agents[..n as usize];
    let demographic_summary = DemographicSummary {
        base_agents: n,
        vulnerable_agents: 4 * n_vulnerable_each,
        elderly_share: base.iter().filter(|a| a.age > 60).count() as f64 / n as f64,
        bachelor_share: base.iter().filter(|a| a.education == Education::BachelorPlus).count() as f64 / n as f64,
    };
    Ok(Population {
        seed,
        demographic_summary,
        agents: agents.into_iter().map(|profile| Resident { profile, needs: None }).collect(),
    })
}

impl Population {
    pub fn from_json(text: &str) -> Result<Self, PopulationError> {
        serde_json::from_str(text).map_err(|e| PopulationError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("population serializes")
    }

    pub fn get(&self, id: u32) -> Option<&Resident> {
        self.agents.iter().find(|a| a.profile.id == id)
    }

    pub fn all_needs_frozen(&self) -> bool {
        self.agents.iter().all(|a| a.needs.is_some())
    }

    /// Residents whose home plot lies in `sub_community`, ascending id.
    pub fn in_sub_community<'a>(&'a self, scenario: &'a Scenario, sub_community: u32) -> Vec<&'a Resident> {
        let mut v: Vec<&Resident> = self
            .agents
            .iter()
            .filter(|a| scenario.plot(a.profile.home_plot).is_some_and(|p| p.sub_community == sub_community))
            .collect();
        v.sort_by_key(|a| a.profile.id);
        v
    }
}

/// Populate every missing need set through `backend`. Agents that already
/// have needs are left untouched. Transcript entries are committed in
/// ascending agent id order regardless of execution mode.
pub fn elicit_needs(
    population: &Population,
    backend: &dyn AgentBackend,
    transcript: &Transcript,
    exec: Execution,
    parallelism: usize,
) -> Result<Population, PopulationError> {
    let mut order: Vec<usize> = (0..population.agents.len()).filter(|&i| population.agents[i].needs.is_none()).collect();
    order.sort_by_key(|&i| population.agents[i].profile.id);
    let results = exec::map_bounded(exec, parallelism, &order, |&i| {
        let profile = &population.agents[i].profile;
        backend.elicit_needs(&NeedsRequest { profile })
    });
    let mut out = population.clone();
    let mut failed = Vec::new();
    let mut first_error: Option<AgentError> = None;
    for (&i, result) in order.iter().zip(results) {
        let id = out.agents[i].profile.id;
        match result {
            Ok(exchange) => {
                transcript.commit(crate::agents::AgentRole::Resident, Some(id), &exchange);
                out.agents[i].needs = Some(exchange.payload);
            }
            Err(e) => {
                failed.push(id);
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(PopulationError::PartialElicitation { failed, first_error: e.to_string() });
    }
    Ok(out)
}

/// Conditions used by the scripted need table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "when", content = "group")]
pub enum NeedCondition {
    AgeAtLeast60,
    Group(VulnerableGroup),
    EmployedUnder60,
}

impl NeedCondition {
    fn holds(self, p: &ResidentProfile) -> bool {
        match self {
            NeedCondition::AgeAtLeast60 => p.age >= 60,
            NeedCondition::Group(g) => p.vulnerable.contains(&g),
            NeedCondition::EmployedUnder60 => p.employed && p.age < 60,
        }
    }

    fn reason(self, u: LandUse) -> String {
        let why = match self {
            NeedCondition::AgeAtLeast60 => "at my age I need health care and a quiet place to walk",
            NeedCondition::Group(VulnerableGroup::FamilyWithChildren) => "my children need school, play space and a doctor close by",
            NeedCondition::Group(VulnerableGroup::FamilyWithPatient) => "someone in my family needs regular medical care",
            NeedCondition::Group(VulnerableGroup::ElderlyAlone) => "I live alone and must be able to reach help on foot",
            NeedCondition::Group(VulnerableGroup::RentalMigrant) => "I rent here and look for work, affordable shops and basic care",
            NeedCondition::EmployedUnder60 => "a short commute to work matters to me",
        };
        format!("I want a {} nearby because {why}.", u.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedRule {
    #[serde(flatten)]
    pub condition: NeedCondition,
    pub add: Vec<LandUse>,
}

/// Deterministic profile → needs table used by the scripted backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedRules {
    pub rules: Vec<NeedRule>,
    pub padding: Vec<LandUse>,
    pub min_needs: usize,
    pub max_needs: usize,
}

impl Default for NeedRules {
    fn default() -> Self {
        use LandUse::*;
        let rule = |condition, add: &[LandUse]| NeedRule { condition, add: add.to_vec() };
        Self {
            rules: vec![
                rule(NeedCondition::AgeAtLeast60, &[Clinic, Hospital, Park]),
                rule(NeedCondition::Group(VulnerableGroup::FamilyWithChildren), &[School, Park, Clinic]),
                rule(NeedCondition::Group(VulnerableGroup::FamilyWithPatient), &[Hospital, Clinic, Park]),
                rule(NeedCondition::Group(VulnerableGroup::RentalMigrant), &[Business, Recreation, Clinic]),
                rule(NeedCondition::EmployedUnder60, &[Office, Business]),
            ],
            padding: vec![Park, Recreation, Business],
            min_needs: 3,
            max_needs: 5,
        }
    }
}

impl NeedRules {
    pub fn apply(&self, profile: &ResidentProfile) -> NeedSet {
        let mut needs: Vec<LandUse> = Vec::new();
        let mut rationales = BTreeMap::new();
        for rule in self.rules.iter().filter(|r| r.condition.holds(profile)) {
            for &u in &rule.add {
                if !needs.contains(&u) {
                    needs.push(u);
                    rationales.insert(u, rule.condition.reason(u));
                }
            }
        }
        for &u in &self.padding {
            if needs.len() >= self.min_needs {
                break;
            }
            if !needs.contains(&u) {
                needs.push(u);
                rationales.insert(u, format!("A {} within walking distance would improve daily life here.", u.label()));
            }
        }
        needs.truncate(self.max_needs);
        rationales.retain(|u, _| needs.contains(u));
        NeedSet::new(needs, NeedSource::Scripted, rationales).expect("rule table yields a valid need set")
    }
}

mod agent_records {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct ProfileRecord {
        gender: Gender,
        age: u32,
        family_size: u32,
        education: Education,
        employed: bool,
        #[serde(default)]
        vulnerable: BTreeSet<VulnerableGroup>,
    }

    #[derive(Serialize, Deserialize)]
    struct AgentRecord {
        id: u32,
        profile: ProfileRecord,
        home: Point,
        home_plot: PlotId,
        #[serde(default)]
        needs: Vec<LandUse>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        needs_source: Option<NeedSource>,
        #[serde(default)]
        rationales: BTreeMap<LandUse, String>,
    }

    pub fn serialize<S: Serializer>(agents: &[Resident], s: S) -> Result<S::Ok, S::Error> {
        let records: Vec<AgentRecord> = agents
            .iter()
            .map(|a| {
                let p = &a.profile;
                AgentRecord {
                    id: p.id,
                    profile: ProfileRecord {
                        gender: p.gender,
                        age: p.age,
                        family_size: p.family_size,
                        education: p.education,
                        employed: p.employed,
                        vulnerable: p.vulnerable.clone(),
                    },
                    home: p.home,
                    home_plot: p.home_plot,
                    needs: a.needs.as_ref().map(|n| n.needs().to_vec()).unwrap_or_default(),
                    needs_source: a.needs.as_ref().map(|n| n.source),
                    rationales: a.needs.as_ref().map(|n| n.rationales.clone()).unwrap_or_default(),
                }
            })
            .collect();
        records.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Resident>, D::Error> {
        let records = Vec::<AgentRecord>::deserialize(d)?;
        let mut ids = BTreeSet::new();
        records
            .into_iter()
            .map(|r| {
                if !ids.insert(r.id) {
                    return Err(serde::de::Error::custom(format!("duplicate agent id {}", r.id)));
                }
                let needs = if r.needs.is_empty() {
                    None
                } else {
                    Some(
                        NeedSet::new(r.needs, r.needs_source.unwrap_or(NeedSource::Scripted), r.rationales)
                            .map_err(|e| serde::de::Error::custom(format!("agent {}: {e}", r.id)))?,
                    )
                };
                Ok(Resident {
                    profile: ResidentProfile {
                        id: r.id,
                        gender: r.profile.gender,
                        age: r.profile.age,
                        family_size: r.profile.family_size,
                        education: r.profile.education,
                        employed: r.profile.employed,
                        vulnerable: r.profile.vulnerable,
                        home: r.home,
                        home_plot: r.home_plot,
                    },
                    needs,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ScriptedBackend;
    use crate::scenario_gen::{generate, ScenarioTemplate};

    fn profile(age: u32, employed: bool, groups: &[VulnerableGroup]) -> ResidentProfile {
        ResidentProfile {
            id: 0,
            gender: Gender::Female,
            age,
            family_size: if groups.contains(&VulnerableGroup::ElderlyAlone) { 1 } else { 3 },
            education: Education::BelowBachelor,
            employed,
            vulnerable: groups.iter().copied().collect(),
            home: Point::default(),
            home_plot: 0,
        }
    }

    #[test]
    fn hlg_proportions_within_three_points() {
        let s = generate(&ScenarioTemplate::hlg(), 7).unwrap();
        let pop = synthesize(&s, &DemographicStats::hlg(), 1000, 25, 11).unwrap();
        let sum = pop.demographic_summary;
        assert!((sum.elderly_share - 0.1638).abs() <= 0.03, "{sum:?}");
        assert!((sum.bachelor_share - 0.4888).abs() <= 0.03, "{sum:?}");
        assert_eq!(pop.agents.len(), 1100);
        assert_eq!(pop.agents.iter().filter(|a| a.profile.is_vulnerable()).count(), 100);
    }

    #[test]
    fn single_agent_population() {
        let s = generate(&ScenarioTemplate::hlg(), 1).unwrap();
        let pop = synthesize(&s, &DemographicStats::hlg(), 1, 0, 3).unwrap();
        assert_eq!(pop.agents.len(), 1);
    }

    #[test]
    fn same_seed_same_file() {
        let s = generate(&ScenarioTemplate::dhm(), 2).unwrap();
        let a = synthesize(&s, &DemographicStats::dhm(), 200, 5, 9).unwrap().to_json();
        let b = synthesize(&s, &DemographicStats::dhm(), 200, 5, 9).unwrap().to_json();
        assert_eq!(a, b);
        let c = synthesize(&s, &DemographicStats::dhm(), 200, 5, 10).unwrap().to_json();
        assert_ne!(a, c);
    }

    #[test]
    fn homes_lie_in_their_residential_plot() {
        let s = generate(&ScenarioTemplate::hlg(), 4).unwrap();
        let pop = synthesize(&s, &DemographicStats::hlg(), 300, 10, 5).unwrap();
        for a in &pop.agents {
            let plot = s.plot(a.profile.home_plot).unwrap();
            assert_eq!(plot.fixed_use(), Some(LandUse::Residential));
            assert!(point_in_polygon(a.profile.home, &plot.polygon));
            if a.profile.vulnerable.contains(&VulnerableGroup::ElderlyAlone) {
                assert!(a.profile.age >= 60 && a.profile.family_size == 1);
            }
        }
    }

    #[test]
    fn no_residential_plot_is_an_error() {
        let s = generate(&ScenarioTemplate::grid(3, 3), 0).unwrap();
        assert_eq!(synthesize(&s, &DemographicStats::hlg(), 10, 0, 0), Err(PopulationError::NoResidentialPlot));
    }

    #[test]
    fn need_rules_follow_profiles() {
        let rules = NeedRules::default();
        let elderly = rules.apply(&profile(75, false, &[VulnerableGroup::ElderlyAlone]));
        assert!(elderly.contains(LandUse::Clinic));
        let worker = rules.apply(&profile(35, true, &[]));
        assert!(worker.contains(LandUse::Office));
        assert_eq!(worker.needs(), &[LandUse::Office, LandUse::Business, LandUse::Park]);
        let patient = rules.apply(&profile(40, false, &[VulnerableGroup::FamilyWithPatient]));
        assert!(patient.contains(LandUse::Hospital) && patient.contains(LandUse::Clinic));
        let idle = rules.apply(&profile(30, false, &[]));
        assert_eq!(idle.needs(), &[LandUse::Park, LandUse::Recreation, LandUse::Business]);
        let busy = rules.apply(&profile(
            45,
            true,
            &[VulnerableGroup::FamilyWithChildren, VulnerableGroup::RentalMigrant, VulnerableGroup::FamilyWithPatient],
        ));
        assert_eq!(busy.needs(), &[LandUse::School, LandUse::Park, LandUse::Clinic, LandUse::Hospital, LandUse::Business]);
        assert_eq!(busy.rationales.len(), 5);
    }

    #[test]
    fn need_set_validation() {
        use LandUse::*;
        assert_eq!(NeedSet::elicited(vec![School, Park], NeedSource::Llm, BTreeMap::new()), Err(NeedSetError::BadSize(2)));
        assert_eq!(
            NeedSet::new(vec![School, School, Park], NeedSource::Llm, BTreeMap::new()),
            Err(NeedSetError::Duplicate(School))
        );
        assert_eq!(
            NeedSet::new(vec![Residential, Park, Office], NeedSource::Llm, BTreeMap::new()),
            Err(NeedSetError::NotAssignable(Residential))
        );
        assert!(NeedSet::new(LandUse::ASSIGNABLE.to_vec(), NeedSource::Scripted, BTreeMap::new()).is_ok());
    }

    #[test]
    fn scripted_elicitation_is_idempotent_and_round_trips() {
        let s = generate(&ScenarioTemplate::hlg(), 3).unwrap();
        let pop = synthesize(&s, &DemographicStats::hlg(), 40, 2, 1).unwrap();
        let backend = ScriptedBackend::new();
        let t = Transcript::new();
        let once = elicit_needs(&pop, &backend, &t, Execution::Parallel, 4).unwrap();
        assert!(once.all_needs_frozen());
        assert_eq!(t.len(), 48 * 2);
        let twice = elicit_needs(&once, &backend, &t, Execution::Sequential, 1).unwrap();
        assert_eq!(once, twice);
        assert_eq!(t.len(), 48 * 2);
        assert_eq!(Population::from_json(&once.to_json()).unwrap(), once);
        let seq = elicit_needs(&pop, &backend, &Transcript::new(), Execution::Sequential, 1).unwrap();
        assert_eq!(seq, once);
    }
}
