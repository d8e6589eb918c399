//! Deterministic rule-based stand-in for the language model. Every action
//! is a pure function of its request.

use super::payload::{render_message, ActionPayload, NeedDeclaration, Opinion, PlanProposal, PlanRevision, PlotChange, ToPayload};
use super::prompts::PromptSet;
use super::*;
use crate::metrics::{accessible, SERVICE_RADIUS_M};
use crate::planners::{gsca_with_trace, Method, PlannerConfig};
use crate::population::{NeedRules, NeedSet};

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rules: NeedRules,
    prompts: PromptSet,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rules(rules: NeedRules) -> Self {
        Self { rules, prompts: PromptSet::default() }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }
}

fn single<T: ToPayload>(prompt: String, prose: &str, payload: T) -> Exchange<T> {
    let response = render_message(prose, &payload.to_payload());
    Exchange { turns: vec![Turn::new(prompt, response)], payload }
}

fn distance_text(d: Option<f64>) -> String {
    match d {
        Some(d) if d.is_finite() => format!("{d:.0}"),
        _ => "none planned".to_string(),
    }
}

/// Pick the vacant plot to give up: its current use has the largest
/// surplus, ties by lowest id.
fn donor(
    candidates: impl Iterator<Item = PlotId>,
    plan: &Plan,
    surplus: &BTreeMap<LandUse, i64>,
    exclude: &[LandUse],
) -> Option<(PlotId, LandUse, i64)> {
    candidates
        .filter_map(|id| plan.get(id).map(|u| (id, u, surplus.get(&u).copied().unwrap_or(0))))
        .filter(|(_, u, s)| *s > 0 && !exclude.contains(u))
        .fold(None, |best, cand| match best {
            Some((_, _, bs)) if bs >= cand.2 => best,
            _ => Some(cand),
        })
}

impl AgentBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn elicit_needs(&self, req: &NeedsRequest) -> Result<Exchange<NeedSet>, AgentError> {
        let prompt = self
            .prompts
            .render("resident_needs", &[("profile", format!("You are {}.", req.profile.describe())), ("land_uses", land_use_list())])?;
        let needs = self.rules.apply(req.profile);
        let prose: Vec<String> = needs
            .needs()
            .iter()
            .map(|u| format!("{}: {}", u.name(), needs.rationales.get(u).map_or("", String::as_str)))
            .collect();
        let decl = ActionPayload::NeedDeclaration(NeedDeclaration { needs: needs.needs().to_vec(), rationales: needs.rationales.clone() });
        let response = render_message(&prose.join("\n"), &decl);
        Ok(Exchange { turns: vec![Turn::new(prompt, response)], payload: needs })
    }

    fn propose(&self, req: &ProposeRequest) -> Result<Exchange<PlanProposal>, AgentError> {
        let s = req.scenario;
        let prompt = self.prompts.render(
            "cp_propose",
            &[
                ("area_km2", format!("{:.2}", s.metadata.area_km2)),
                ("land_uses", land_use_list()),
                ("constraints", constraint_list(&s.constraints)),
                ("plot_table", plot_table(s, None, None)),
            ],
        )?;
        let mut cfg = PlannerConfig::new(Method::Gsca, req.seed);
        cfg.execution = req.execution;
        let (_, trace) = gsca_with_trace(s, req.population, &cfg)?;
        let n_min = s.constraints.total_minimum() as usize;
        let mut assignments: Vec<PlotChange> = trace
            .picks
            .iter()
            .enumerate()
            .map(|(i, &(plot_id, land_use, gain))| {
                let why = if i < n_min { "required minimum" } else { "additional plot" };
                PlotChange { plot_id, land_use, reason: format!("{why}; brings {gain} more residents within reach") }
            })
            .collect();
        assignments.sort_by_key(|c| c.plot_id);
        let prose = format!(
            "I placed each required land use where it reaches the most residents not yet served, then filled the remaining {} plots in rotation.",
            assignments.len().saturating_sub(n_min)
        );
        Ok(single(prompt, &prose, PlanProposal { assignments }))
    }

    fn opine(&self, req: &OpineRequest) -> Result<Exchange<Opinion>, AgentError> {
        let r = req.resident;
        let needs = r.needs.as_ref().ok_or_else(|| AgentError::Precondition(format!("agent {} has no needs", r.profile.id)))?;
        let nearest: Vec<(LandUse, Option<(PlotId, f64)>)> =
            needs.needs().iter().map(|&u| (u, req.facilities.nearest(r.profile.home, u))).collect();
        let unmet: Vec<(LandUse, Option<(PlotId, f64)>)> =
            nearest.iter().copied().filter(|(_, n)| !n.is_some_and(|(_, d)| accessible(d))).collect();
        let distances: String = nearest.iter().map(|(u, n)| format!("- {}: {}\n", u.name(), distance_text(n.map(|x| x.1)))).collect();
        let unmet_names: Vec<&str> = unmet.iter().map(|(u, _)| u.name()).collect();
        let prompt = self.prompts.render(
            "resident_opine",
            &[
                ("profile", format!("You are {}.", r.profile.describe())),
                ("needs", needs.needs().iter().map(|u| u.name()).collect::<Vec<_>>().join(", ")),
                ("distances", distances),
                ("unmet", if unmet_names.is_empty() { "none".into() } else { unmet_names.join(", ") }),
                ("question", req.question.unwrap_or("What do you think of the current plan?").to_string()),
                ("agent_id", r.profile.id.to_string()),
            ],
        )?;
        let text = if unmet.is_empty() {
            "Everything I need is within walking distance. I am happy with this plan.".to_string()
        } else {
            let parts: Vec<String> = unmet
                .iter()
                .map(|(u, n)| match n {
                    Some((id, d)) => format!("the nearest {} (plot {id}) is {d:.0} m away", u.label()),
                    None => format!("there is no {} at all", u.label()),
                })
                .collect();
            format!("I would like these closer to home: {}.", parts.join("; "))
        };
        let mut plot_ids: Vec<PlotId> = unmet.iter().filter_map(|(_, n)| n.map(|x| x.0)).collect();
        plot_ids.sort_unstable();
        plot_ids.dedup();
        let opinion = Opinion { agent_id: r.profile.id, unmet: unmet.iter().map(|x| x.0).collect(), text: text.clone(), plot_ids };
        Ok(single(prompt, &text, opinion))
    }

    fn discuss(&self, req: &DiscussRequest) -> Result<Exchange<PlanRevision>, AgentError> {
        let s = req.scenario;
        let ranking = demand_ranking(req.opinions);
        let demands: String = ranking.iter().map(|(u, n)| format!("- {}: {n}\n", u.name())).collect();
        let opinions: String = req.opinions.iter().map(|o| format!("- resident {}: {}\n", o.agent_id, o.text)).collect();
        let prompt = self.prompts.render(
            "sp_discuss",
            &[
                ("sub_community", req.sub_community.to_string()),
                ("opinions", if opinions.is_empty() { "(no residents)\n".into() } else { opinions }),
                ("demands", if demands.is_empty() { "none\n".into() } else { demands }),
                ("constraints", constraint_list(&s.constraints)),
                ("plot_table", plot_table(s, Some(req.plan), Some(req.sub_community))),
                ("max_changes", req.max_changes.to_string()),
            ],
        )?;

        let local: Vec<PlotId> = s.plots_in(req.sub_community).filter(|p| p.is_vacant()).map(|p| p.id).collect();
        let mut working = req.plan.clone();
        let mut changes: Vec<PlotChange> = Vec::new();
        for &(t, count) in &ranking {
            if changes.len() >= req.max_changes {
                break;
            }
            let surplus = surplus_by_use(s, &working)?;
            let free = local.iter().copied().filter(|id| !changes.iter().any(|c| c.plot_id == *id));
            let Some((id, from, extra)) = donor(free, &working, &surplus, &[t]) else { continue };
            working = working.apply(s, &[(id, t)])?;
            changes.push(PlotChange {
                plot_id: id,
                land_use: t,
                reason: format!(
                    "{count} resident(s) have no {} within {SERVICE_RADIUS_M:.0} m; {} is {extra} above its minimum",
                    t.label(),
                    from.label()
                ),
            });
        }
        let prose = if ranking.is_empty() {
            format!("Residents of sub-community {} reported no unmet needs. No changes.", req.sub_community)
        } else {
            let top: Vec<String> = ranking.iter().take(3).map(|(u, n)| format!("{} ({n})", u.label())).collect();
            format!(
                "Residents of sub-community {} most often asked for: {}. We agreed on {} change(s).",
                req.sub_community,
                top.join(", "),
                changes.len()
            )
        };
        Ok(single(prompt, &prose, PlanRevision { changes }))
    }

    fn feedback(&self, req: &FeedbackRequest) -> Result<Exchange<PlanRevision>, AgentError> {
        let s = req.scenario;
        if req.violations.is_empty() {
            return Err(AgentError::Precondition("feedback requires at least one violation".into()));
        }
        if let Some(v) = req.violations.iter().find(|v| v.is_structural()) {
            return Err(AgentError::Precondition(format!("plan is structurally invalid: {v}")));
        }
        let prompt = self.prompts.render(
            "cp_feedback",
            &[
                ("violations", violation_list(req.violations)),
                ("constraints", constraint_list(&s.constraints)),
                ("plot_table", plot_table(s, Some(req.plan), None)),
            ],
        )?;
        let vacant: Vec<PlotId> = s.vacant_ids().collect();
        let mut working = req.plan.clone();
        let mut changes: Vec<PlotChange> = Vec::new();
        for v in req.violations {
            let Violation::Shortfall { land_use, .. } = *v else { continue };
            let members = s.constraints.requirement_for(land_use).map_or(vec![land_use], |r| r.members);
            for _ in 0..v.deficit() {
                let surplus = surplus_by_use(s, &working)?;
                let (id, from, _) = donor(vacant.iter().copied(), &working, &surplus, &members).ok_or_else(|| {
                    AgentError::Rejected { attempts: 1, reason: format!("no land use has plots to spare for {land_use}") }
                })?;
                working = working.apply(s, &[(id, land_use)])?;
                changes.push(PlotChange {
                    plot_id: id,
                    land_use,
                    reason: format!("{} is below its minimum; {} has plots to spare", land_use.label(), from.label()),
                });
            }
        }
        let prose = format!("To meet the requirements I reassign {} plot(s).", changes.len());
        Ok(single(prompt, &prose, PlanRevision { changes }))
    }
}
