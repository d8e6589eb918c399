//! Backend that routes every action through a chat-completion client.

use super::payload::{parse_payload, ActionPayload, Opinion, ParseError, PayloadKind, PlanProposal, PlanRevision};
use super::prompts::PromptSet;
use super::*;
use crate::population::{NeedSet, NeedSource};
use agora_llm::{ChatClient, ChatMessage};

const SYSTEM_CP: &str = "You are the chief planner of a community land-use planning process. You know urban planning practice well and follow the requested output format exactly.";
const SYSTEM_SP: &str = "You are a sub-community planner moderating a discussion among residents about land use in your area. You follow the requested output format exactly.";
const SYSTEM_RESIDENT: &str = "You role-play a resident of a city community taking part in a participatory planning discussion. Speak in the first person and follow the requested output format exactly.";

/// Why a response could not be used.
enum Reject {
    Parse(ParseError),
    Invalid(String),
}

impl Reject {
    fn message(&self) -> String {
        match self {
            Reject::Parse(e) => e.to_string(),
            Reject::Invalid(s) => s.clone(),
        }
    }
}

pub struct LlmBackend {
    client: ChatClient,
    prompts: PromptSet,
    /// Corrective retries for the chief planner's proposal.
    pub propose_retries: u32,
    /// Corrective retries for revisions.
    pub revision_retries: u32,
    /// Corrective retries for need declarations and opinions.
    pub resident_retries: u32,
}

impl LlmBackend {
    pub fn new(client: ChatClient) -> Self {
        Self { client, prompts: PromptSet::default(), propose_retries: 3, revision_retries: 1, resident_retries: 2 }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn client(&self) -> &ChatClient {
        &self.client
    }

    /// Ask, check, and on rejection send a corrective follow-up.
    fn converse<T>(
        &self,
        system: &str,
        prompt: String,
        retries: u32,
        check: impl Fn(&str) -> Result<T, Reject>,
    ) -> Result<Exchange<T>, AgentError> {
        let mut messages = vec![ChatMessage::system(system), ChatMessage::user(prompt.clone())];
        let mut turns = Vec::new();
        let mut user_text = prompt;
        for attempt in 1..=retries + 1 {
            let completion = self.client.complete(&self.client.request(messages.clone()))?;
            turns.push(Turn { prompt: user_text.clone(), response: completion.text.clone(), usage: Some(completion.usage) });
            match check(&completion.text) {
                Ok(payload) => return Ok(Exchange { turns, payload }),
                Err(reject) if attempt <= retries => {
                    user_text = format!(
                        "Your previous answer could not be used: {}. Reply again with prose followed by exactly one fenced JSON block in the requested format.",
                        reject.message()
                    );
                    messages.push(ChatMessage::assistant(completion.text));
                    messages.push(ChatMessage::user(user_text.clone()));
                }
                Err(Reject::Parse(error)) => return Err(AgentError::Parse { attempts: attempt, error }),
                Err(Reject::Invalid(reason)) => return Err(AgentError::Rejected { attempts: attempt, reason }),
            }
        }
        unreachable!("loop returns on the final attempt")
    }
}

fn parse_as(text: &str, kind: PayloadKind, scenario: Option<&Scenario>) -> Result<ActionPayload, Reject> {
    parse_payload(text, Some(kind), scenario).map_err(Reject::Parse)
}

fn expect_revision(p: ActionPayload) -> PlanRevision {
    match p {
        ActionPayload::PlanRevision(r) => r,
        _ => unreachable!("kind checked by the parser"),
    }
}

impl AgentBackend for LlmBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Llm
    }

    fn model(&self) -> Option<String> {
        Some(self.client.model().to_string())
    }

    fn usage(&self) -> Option<UsageSummary> {
        Some(self.client.usage())
    }

    fn elicit_needs(&self, req: &NeedsRequest) -> Result<Exchange<NeedSet>, AgentError> {
        let prompt = self
            .prompts
            .render("resident_needs", &[("profile", format!("You are {}.", req.profile.describe())), ("land_uses", land_use_list())])?;
        self.converse(SYSTEM_RESIDENT, prompt, self.resident_retries, |text| {
            let ActionPayload::NeedDeclaration(d) = parse_as(text, PayloadKind::NeedDeclaration, None)? else { unreachable!() };
            let mut rationales = d.rationales;
            rationales.retain(|u, _| d.needs.contains(u));
            NeedSet::elicited(d.needs, NeedSource::Llm, rationales).map_err(|e| Reject::Invalid(e.to_string()))
        })
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
        let vacant: BTreeSet<PlotId> = s.vacant_ids().collect();
        self.converse(SYSTEM_CP, prompt, self.propose_retries, |text| {
            let ActionPayload::PlanProposal(p) = parse_as(text, PayloadKind::PlanProposal, Some(s))? else { unreachable!() };
            let named: BTreeSet<PlotId> = p.assignments.iter().map(|c| c.plot_id).collect();
            if named.len() != p.assignments.len() {
                return Err(Reject::Invalid("some plots are assigned more than once".into()));
            }
            let missing: Vec<String> = vacant.difference(&named).map(|id| id.to_string()).collect();
            if !missing.is_empty() {
                return Err(Reject::Invalid(format!("the proposal is missing vacant plots {}", missing.join(", "))));
            }
            Ok(p)
        })
    }

    fn opine(&self, req: &OpineRequest) -> Result<Exchange<Opinion>, AgentError> {
        let r = req.resident;
        let needs = r.needs.as_ref().ok_or_else(|| AgentError::Precondition(format!("agent {} has no needs", r.profile.id)))?;
        let unmet = unmet_needs(r, req.facilities);
        let distances: String = needs
            .needs()
            .iter()
            .map(|&u| match req.facilities.nearest(r.profile.home, u) {
                Some((id, d)) => format!("- {}: {d:.0} (plot {id})\n", u.name()),
                None => format!("- {}: none planned\n", u.name()),
            })
            .collect();
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
        let computed: Vec<LandUse> = unmet.iter().map(|x| x.0).collect();
        self.converse(SYSTEM_RESIDENT, prompt, self.resident_retries, |text| {
            let ActionPayload::Opinion(mut o) = parse_as(text, PayloadKind::Opinion, Some(req.scenario))? else { unreachable!() };
            // unmet needs are a fact of the plan, not of the model's reading
            o.agent_id = r.profile.id;
            o.unmet = computed.clone();
            Ok(o)
        })
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
        self.converse(SYSTEM_SP, prompt, self.revision_retries, |text| {
            let rev = expect_revision(parse_payload(text, Some(PayloadKind::PlanRevision), Some(s)).map_err(Reject::Parse)?);
            check_sp_revision(req, &rev).map_err(Reject::Invalid)?;
            Ok(rev)
        })
    }

    fn feedback(&self, req: &FeedbackRequest) -> Result<Exchange<PlanRevision>, AgentError> {
        let s = req.scenario;
        if req.violations.is_empty() {
            return Err(AgentError::Precondition("feedback requires at least one violation".into()));
        }
        let prompt = self.prompts.render(
            "cp_feedback",
            &[
                ("violations", violation_list(req.violations)),
                ("constraints", constraint_list(&s.constraints)),
                ("plot_table", plot_table(s, Some(req.plan), None)),
            ],
        )?;
        self.converse(SYSTEM_CP, prompt, self.revision_retries, |text| {
            let rev = expect_revision(parse_payload(text, Some(PayloadKind::PlanRevision), Some(s)).map_err(Reject::Parse)?);
            check_feedback_revision(req, &rev).map_err(Reject::Invalid)?;
            Ok(rev)
        })
    }
}
