use agora_core::agents::{ScriptedBackend, Transcript};
use agora_core::exec::Execution;
use agora_core::metrics::evaluate_with;
use agora_core::planners::{plan, plan_gsca, Method, PlannerConfig};
use agora_core::population::{elicit_needs, synthesize, DemographicStats};
use agora_core::scenario_gen::{generate, ScenarioTemplate};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_modes(c: &mut Criterion) {
    let scenario = generate(&ScenarioTemplate::hlg(), 42).unwrap();
    let pop = synthesize(&scenario, &DemographicStats::hlg(), 1000, 25, 42).unwrap();
    let pop = elicit_needs(&pop, &ScriptedBackend::new(), &Transcript::new(), Execution::Parallel, 8).unwrap();
    let baseline = plan(&scenario, None, &PlannerConfig::new(Method::Random, 42)).unwrap();

    let mut g = c.benchmark_group("evaluate");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_with(&scenario, &baseline, &pop, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("gsca");
    g.sample_size(20);
    for (name, exec) in MODES {
        let cfg = PlannerConfig { execution: exec, ..PlannerConfig::new(Method::Gsca, 42) };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| plan_gsca(black_box(&scenario), &pop, &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_modes);
criterion_main!(benches);
