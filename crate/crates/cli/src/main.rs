mod commands;
mod settings;

use clap::{Args, Parser, Subcommand};
use settings::{flag, Settings};
use std::path::PathBuf;
use std::process::ExitCode;

/// Participatory land-use planning simulator.
#[derive(Parser, Debug)]
#[command(name = "agora", version, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Random seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML file whose keys mirror the long flag names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of cached LLM responses.
    #[arg(long, global = true)]
    llm_cache: Option<PathBuf>,
    /// Agent backend.
    #[arg(long, global = true, value_parser = ["scripted", "llm"])]
    backend: Option<String>,
    /// Directory with prompt template overrides (<name>.txt).
    #[arg(long, global = true)]
    prompts: Option<PathBuf>,
    /// Chat-completions URL; defaults to $AGORA_LLM_ENDPOINT.
    #[arg(long, global = true)]
    llm_endpoint: Option<String>,
    /// Model name; defaults to $AGORA_LLM_MODEL.
    #[arg(long, global = true)]
    llm_model: Option<String>,
    /// Client-side rate limit for LLM calls.
    #[arg(long, global = true)]
    requests_per_minute: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario from a template.
    GenScenario(GenScenario),
    /// Synthesize residents and freeze their needs.
    SynthPop(SynthPop),
    /// Plan with a baseline method.
    Baseline(Baseline),
    /// Full proposal, discussion and feedback pipeline.
    Run(Run),
    /// Score a plan.
    Eval(Eval),
    /// Score all methods on one population.
    Compare(Compare),
    /// Serve the sandbox HTTP API.
    Serve(Serve),
}

#[derive(Args, Debug)]
struct GenScenario {
    /// hlg, dhm or grid.
    #[arg(long)]
    template: Option<String>,
    /// Grid rows (grid template only).
    #[arg(long)]
    rows: Option<usize>,
    /// Grid columns (grid template only).
    #[arg(long)]
    cols: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthPop {
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Base agents.
    #[arg(long)]
    n: Option<u32>,
    /// Extra agents per vulnerable group.
    #[arg(long)]
    vulnerable_each: Option<u32>,
    /// Demographic profile (hlg or dhm); defaults to the scenario's template.
    #[arg(long)]
    stats: Option<String>,
    /// Concurrent agent calls.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args, Debug)]
struct Baseline {
    /// random, centralized, decentralized or gsca.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Population (required by gsca).
    #[arg(long)]
    pop: Option<PathBuf>,
    /// Single-threaded execution.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct PipelineFlags {
    #[arg(long)]
    max_feedback_iterations: Option<u32>,
    #[arg(long)]
    sp_max_changes: Option<usize>,
    /// Residents heard per sub-community (all when absent).
    #[arg(long)]
    opinion_sample: Option<usize>,
    #[arg(long)]
    discussion_passes: Option<u32>,
    /// Comma-separated sub-community order.
    #[arg(long, value_delimiter = ',')]
    sub_community_order: Option<Vec<u32>>,
    #[arg(long)]
    skip_discussion: bool,
    /// Also run the feedback loop right after the proposal.
    #[arg(long)]
    check_initial: bool,
    /// Concurrent agent calls.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Single-threaded execution.
    #[arg(long)]
    sequential: bool,
    /// Record wall-clock times and transcript timestamps.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct Run {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    pop: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    pop: Option<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Include per-agent scores.
    #[arg(long)]
    per_agent: bool,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct Compare {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    pop: Option<PathBuf>,
    /// Comma-separated subset of random, centralized, decentralized, gsca,
    /// pipeline, pipeline-no-discussion.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
struct Serve {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    pop: Option<PathBuf>,
    /// Starting plan; a GSCA plan when absent.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    /// Allowed CORS origin (any when absent).
    #[arg(long)]
    origin: Option<String>,
    #[arg(long)]
    sp_max_changes: Option<usize>,
    #[arg(long)]
    opinion_sample: Option<usize>,
}

impl PipelineFlags {
    fn settings(&self) -> Settings {
        Settings {
            max_feedback_iterations: self.max_feedback_iterations,
            sp_max_changes: self.sp_max_changes,
            opinion_sample: self.opinion_sample,
            discussion_passes: self.discussion_passes,
            sub_community_order: self.sub_community_order.clone(),
            skip_discussion: flag(self.skip_discussion),
            check_initial: flag(self.check_initial),
            parallelism: self.parallelism,
            sequential: flag(self.sequential),
            timing: flag(self.timing),
            ..Settings::default()
        }
    }
}

impl Cli {
    fn settings(&self) -> Settings {
        let g = &self.global;
        let base = Settings {
            seed: g.seed,
            out: g.out.clone(),
            llm_cache: g.llm_cache.clone(),
            backend: g.backend.clone(),
            prompts: g.prompts.clone(),
            llm_endpoint: g.llm_endpoint.clone(),
            llm_model: g.llm_model.clone(),
            requests_per_minute: g.requests_per_minute,
            ..Settings::default()
        };
        let specific = match &self.command {
            Command::GenScenario(a) => Settings { template: a.template.clone(), rows: a.rows, cols: a.cols, ..Default::default() },
            Command::SynthPop(a) => Settings {
                scenario: a.scenario.clone(),
                n: a.n,
                vulnerable_each: a.vulnerable_each,
                stats: a.stats.clone(),
                parallelism: a.parallelism,
                ..Default::default()
            },
            Command::Baseline(a) => Settings {
                method: a.method.clone(),
                scenario: a.scenario.clone(),
                pop: a.pop.clone(),
                sequential: flag(a.sequential),
                ..Default::default()
            },
            Command::Run(a) => Settings { scenario: a.scenario.clone(), pop: a.pop.clone(), ..a.pipeline.settings() },
            Command::Eval(a) => Settings {
                scenario: a.scenario.clone(),
                pop: a.pop.clone(),
                plan: a.plan.clone(),
                per_agent: flag(a.per_agent),
                sequential: flag(a.sequential),
                ..Default::default()
            },
            Command::Compare(a) => Settings {
                scenario: a.scenario.clone(),
                pop: a.pop.clone(),
                methods: a.methods.clone(),
                ..a.pipeline.settings()
            },
            Command::Serve(a) => Settings {
                scenario: a.scenario.clone(),
                pop: a.pop.clone(),
                plan: a.plan.clone(),
                host: a.host.clone(),
                port: a.port,
                origin: a.origin.clone(),
                sp_max_changes: a.sp_max_changes,
                opinion_sample: a.opinion_sample,
                ..Default::default()
            },
        };
        specific.overlay(base)
    }

    fn name(&self) -> &'static str {
        match self.command {
            Command::GenScenario(_) => "gen-scenario",
            Command::SynthPop(_) => "synth-pop",
            Command::Baseline(_) => "baseline",
            Command::Run(_) => "run",
            Command::Eval(_) => "eval",
            Command::Compare(_) => "compare",
            Command::Serve(_) => "serve",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let from_cli = cli.settings();
    let settings = match &cli.global.config {
        Some(path) => match Settings::load(path) {
            Ok(file) => file.overlay(from_cli),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => from_cli,
    };
    match commands::execute(cli.name(), &settings) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
