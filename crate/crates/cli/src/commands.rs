use crate::settings::Settings;
use agora_api::{Session, DEFAULT_PORT};
use agora_core::agents::{AgentBackend, BackendKind, LlmBackend, PromptSet, ScriptedBackend, Transcript};
use agora_core::domain::{Plan, Scenario};
use agora_core::exec::Execution;
use agora_core::metrics::evaluate_with;
use agora_core::pipeline::{compare_methods, run, write_run_dir, CompareMethod, PipelineError, RunConfig};
use agora_core::planners::{plan as run_planner, Method, PlannerConfig};
use agora_core::population::{elicit_needs, synthesize, DemographicStats, Population};
use agora_core::scenario_gen::{generate, ScenarioTemplate};
use agora_llm::{ChatClient, ClientConfig, LlmError};
use serde_json::{json, Value};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

fn fail(e: impl fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| fail(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| fail(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| fail(format!("cannot write {}: {e}", path.display())))
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

fn load_scenario(s: &Settings) -> CliResult<Scenario> {
    let path = required(&s.scenario, "scenario")?;
    Scenario::from_json(&read(path)?).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn load_population(s: &Settings) -> CliResult<Population> {
    let path = required(&s.pop, "pop")?;
    Population::from_json(&read(path)?).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn load_plan(path: &Path) -> CliResult<Plan> {
    Plan::from_json(&read(path)?).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn seed(s: &Settings) -> u64 {
    s.seed.unwrap_or(DEFAULT_SEED)
}

fn execution(s: &Settings) -> Execution {
    if s.sequential.unwrap_or(false) {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn backend_kind(s: &Settings) -> CliResult<BackendKind> {
    s.backend.as_deref().unwrap_or("scripted").parse().map_err(CliError::Usage)
}

fn build_backend(s: &Settings) -> CliResult<Arc<dyn AgentBackend>> {
    let prompts = match &s.prompts {
        Some(dir) => PromptSet::with_overrides(dir).map_err(fail)?,
        None => PromptSet::default(),
    };
    Ok(match backend_kind(s)? {
        BackendKind::Scripted => Arc::new(ScriptedBackend::new().with_prompts(prompts)),
        BackendKind::Llm => {
            let mut cfg = ClientConfig::from_env();
            if let Some(e) = &s.llm_endpoint {
                cfg.endpoint = e.clone();
            }
            if let Some(m) = &s.llm_model {
                cfg.model = m.clone();
            }
            cfg.requests_per_minute = s.requests_per_minute;
            cfg.cache_dir = s.llm_cache.clone();
            let client = ChatClient::new(cfg).map_err(|e| match e {
                LlmError::NotConfigured(m) => CliError::Usage(m),
                other => fail(other),
            })?;
            Arc::new(LlmBackend::new(client).with_prompts(prompts))
        }
    })
}

fn run_config(s: &Settings) -> RunConfig {
    let d = RunConfig::default();
    RunConfig {
        seed: seed(s),
        max_feedback_iterations: s.max_feedback_iterations.unwrap_or(d.max_feedback_iterations),
        sp_max_changes: s.sp_max_changes.unwrap_or(d.sp_max_changes),
        opinion_sample: s.opinion_sample.or(d.opinion_sample),
        discussion_passes: s.discussion_passes.unwrap_or(d.discussion_passes),
        sub_community_order: s.sub_community_order.clone(),
        skip_discussion: s.skip_discussion.unwrap_or(false),
        check_initial: s.check_initial.unwrap_or(false),
        parallelism: s.parallelism.unwrap_or(d.parallelism),
        execution: execution(s),
        record_timing: s.timing.unwrap_or(false),
    }
}

/// Metadata common to every report.
fn report(command: &str, s: &Settings, backend: Option<&dyn AgentBackend>, extra: Value) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": s,
        "seed": seed(s),
        "backend": backend.map(|b| b.kind()),
        "model": backend.and_then(|b| b.model()),
        "usage": backend.and_then(|b| b.usage()),
        "details": extra,
    })
}

/// `plan.json` → `plan.report.json`.
fn report_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "output".into());
    out.with_file_name(format!("{stem}.report.json"))
}

pub fn execute(command: &str, s: &Settings) -> CliResult<()> {
    match command {
        "gen-scenario" => gen_scenario(s),
        "synth-pop" => synth_pop(s),
        "baseline" => baseline(s),
        "run" => run_cmd(s),
        "eval" => eval(s),
        "compare" => compare(s),
        "serve" => serve(s),
        other => Err(CliError::Usage(format!("unknown command {other}"))),
    }
}

fn gen_scenario(s: &Settings) -> CliResult<()> {
    let out = required(&s.out, "out")?;
    let name = s.template.as_deref().unwrap_or("hlg");
    let template = match name {
        "grid" => ScenarioTemplate::grid(s.rows.unwrap_or(3), s.cols.unwrap_or(3)),
        other => ScenarioTemplate::by_name(other)
            .ok_or_else(|| CliError::Usage(format!("unknown template {other:?} (expected hlg, dhm or grid)")))?,
    };
    let scenario = generate(&template, seed(s)).map_err(fail)?;
    write(out, &(scenario.to_json() + "\n"))?;
    let extra = json!({
        "template": template,
        "plots": scenario.plots.len(),
        "vacant": scenario.vacant_ids().count(),
        "sub_communities": scenario.n_sub_communities,
    });
    write(&report_path(out), &pretty(&report("gen-scenario", s, None, extra)))?;
    eprintln!("wrote {} ({} plots)", out.display(), scenario.plots.len());
    Ok(())
}

fn synth_pop(s: &Settings) -> CliResult<()> {
    let out = required(&s.out, "out")?;
    let scenario = load_scenario(s)?;
    let stats_name = s
        .stats
        .clone()
        .or_else(|| scenario.metadata.template.clone().filter(|t| t != "grid"))
        .unwrap_or_else(|| "hlg".into());
    let stats = DemographicStats::for_template(&stats_name)
        .ok_or_else(|| CliError::Usage(format!("unknown demographic profile {stats_name:?}")))?;
    let backend = build_backend(s)?;
    let n = s.n.unwrap_or(1000);
    let extra_each = s.vulnerable_each.unwrap_or(25);
    let raw = synthesize(&scenario, &stats, n, extra_each, seed(s)).map_err(fail)?;
    let transcript = Transcript::new();
    let pop = elicit_needs(&raw, backend.as_ref(), &transcript, execution(s), s.parallelism.unwrap_or(8)).map_err(fail)?;
    write(out, &(pop.to_json() + "\n"))?;
    let extra = json!({
        "stats": stats,
        "agents": pop.agents.len(),
        "summary": pop.demographic_summary,
        "transcript_entries": transcript.len(),
    });
    write(&report_path(out), &pretty(&report("synth-pop", s, Some(backend.as_ref()), extra)))?;
    eprintln!("wrote {} ({} agents)", out.display(), pop.agents.len());
    Ok(())
}

fn baseline(s: &Settings) -> CliResult<()> {
    let out = required(&s.out, "out")?;
    let method: Method = s.method.as_deref().unwrap_or("gsca").parse().map_err(|e: agora_core::planners::PlannerError| CliError::Usage(e.to_string()))?;
    let scenario = load_scenario(s)?;
    let pop = match &s.pop {
        Some(_) => Some(load_population(s)?),
        None if method == Method::Gsca => return Err(CliError::Usage("gsca needs --pop".into())),
        None => None,
    };
    let cfg = PlannerConfig { execution: execution(s), ..PlannerConfig::new(method, seed(s)) };
    let plan = run_planner(&scenario, pop.as_ref(), &cfg).map_err(fail)?;
    write(out, &(plan.to_json() + "\n"))?;
    write(&report_path(out), &pretty(&report("baseline", s, None, json!({ "planner": cfg }))))?;
    eprintln!("wrote {} ({method})", out.display());
    Ok(())
}

fn run_cmd(s: &Settings) -> CliResult<()> {
    let out = required(&s.out, "out")?;
    let scenario = load_scenario(s)?;
    let pop = load_population(s)?;
    let backend = build_backend(s)?;
    let cfg = run_config(s);
    let transcript = if cfg.record_timing { Transcript::with_timestamps() } else { Transcript::new() };
    let meta = |extra: Value| report("run", s, Some(backend.as_ref()), json!({ "run_config": cfg, "result": extra }));
    match run(&scenario, &pop, backend.as_ref(), &transcript, &cfg) {
        Ok(result) => {
            let summary = json!({ "final": result.trajectory.last(), "steps": result.trajectory.len() });
            write_run_dir(out, &scenario, &result, &transcript, &meta(summary)).map_err(fail)?;
            eprintln!("wrote {} ({} trajectory rows)", out.display(), result.trajectory.len());
            Ok(())
        }
        Err(PipelineError::Infeasible { iterations, plan, violations }) => {
            write(&out.join("plan_last.json"), &(plan.to_json() + "\n"))?;
            transcript.write_jsonl(&out.join("transcript.jsonl")).map_err(fail)?;
            let summary = json!({ "infeasible_after": iterations, "violations": violations });
            write(&out.join("report.json"), &pretty(&meta(summary)))?;
            Err(fail(format!("plan still infeasible after {iterations} feedback iteration(s); see {}", out.display())))
        }
        Err(e) => Err(fail(e)),
    }
}

fn eval(s: &Settings) -> CliResult<()> {
    let scenario = load_scenario(s)?;
    let pop = load_population(s)?;
    let plan = load_plan(required(&s.plan, "plan")?)?;
    let mut metrics = evaluate_with(&scenario, &plan, &pop, execution(s)).map_err(fail)?;
    metrics.revision_step = plan.revision_step;
    if !s.per_agent.unwrap_or(false) {
        metrics.per_agent.clear();
    }
    let text = pretty(&metrics);
    match &s.out {
        Some(out) => {
            write(out, &text)?;
            write(&report_path(out), &pretty(&report("eval", s, None, json!({ "metrics": metrics.summary() }))))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn compare(s: &Settings) -> CliResult<()> {
    let out = required(&s.out, "out")?;
    let methods: Vec<CompareMethod> = match &s.methods {
        Some(list) => list.iter().map(|m| m.parse().map_err(CliError::Usage)).collect::<CliResult<_>>()?,
        None => CompareMethod::ALL.to_vec(),
    };
    let scenario = load_scenario(s)?;
    let pop = load_population(s)?;
    let backend = build_backend(s)?;
    let cfg = run_config(s);
    let table = compare_methods(&scenario, &pop, &methods, backend.as_ref(), &cfg);
    for row in &table.rows {
        if let Some(plan) = &row.plan {
            write(&out.join(row.method.name()).join("plan.json"), &(plan.to_json() + "\n"))?;
        }
        if let Some(e) = &row.error {
            eprintln!("warning: {} failed: {e}", row.method);
        }
    }
    write(&out.join("comparison.csv"), &table.to_csv())?;
    write(&out.join("comparison.json"), &pretty(&table))?;
    write(&out.join("report.json"), &pretty(&report("compare", s, Some(backend.as_ref()), json!({ "run_config": cfg }))))?;
    eprint!("{}", table.to_csv());
    if table.rows.iter().all(|r| r.error.is_some()) {
        return Err(fail("every method failed"));
    }
    Ok(())
}

fn serve(s: &Settings) -> CliResult<()> {
    let scenario = load_scenario(s)?;
    let pop = load_population(s)?;
    let backend = build_backend(s)?;
    let cfg = run_config(s);
    let plan = match &s.plan {
        Some(p) => load_plan(p)?,
        None => run_planner(&scenario, Some(&pop), &PlannerConfig::new(Method::Gsca, cfg.seed)).map_err(fail)?,
    };
    let origin = match &s.origin {
        Some(o) => Some(o.parse().map_err(|_| CliError::Usage(format!("bad --origin {o:?}")))?),
        None => None,
    };
    let host = s.host.as_deref().unwrap_or("127.0.0.1");
    let addr = format!("{host}:{}", s.port.unwrap_or(DEFAULT_PORT))
        .parse()
        .map_err(|_| CliError::Usage(format!("bad --host {host:?}")))?;
    let session = Session::new(scenario, pop, plan, backend, cfg).map_err(fail)?;
    eprintln!("session {} listening on http://{addr}", session.id);
    let rt = tokio::runtime::Runtime::new().map_err(fail)?;
    rt.block_on(agora_api::serve(Arc::new(session), addr, origin)).map_err(fail)
}
