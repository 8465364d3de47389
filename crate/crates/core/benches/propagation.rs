use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use ignn_core::synth::{sbm_init, sbm_migrate, sparse_features, SbmConfig};
use ignn_core::{apply_events, batch_update, propagate_all, ColumnMatrix, Graph, GraphEvent, PropagationConfig, PropagationState};

struct Fixture {
    graph: Graph,
    state: PropagationState,
    events: Vec<GraphEvent>,
    signal: ColumnMatrix,
}

fn fixture() -> Fixture {
    let sbm = SbmConfig { nodes: 3000, blocks: 6, intra_degree: 16.0, inter_degree: 1.0, migrants_per_step: 8, seed: 11 };
    let (graph, mut labels, mut rng) = sbm_init(&sbm).unwrap();
    let signal = sparse_features(sbm.nodes, 16, &mut rng);
    let events = sbm_migrate(&graph, &mut labels, &sbm, &mut rng);
    let mut state = PropagationState::new(&graph, signal.clone()).unwrap();
    propagate_all(&graph, &config(), &mut state).unwrap();
    Fixture { graph, state, events, signal }
}

fn config() -> PropagationConfig {
    PropagationConfig::new(0.2, 0.5, 1e-6).unwrap()
}

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let wide = rayon::current_num_threads();
    let mut out = vec![("threads-1".to_string(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap())];
    if wide > 1 {
        out.push((format!("threads-{wide}"), rayon::ThreadPoolBuilder::new().num_threads(wide).build().unwrap()));
    }
    out
}

fn bench_scratch(c: &mut Criterion) {
    let fx = fixture();
    let cfg = config();
    let mut group = c.benchmark_group("propagate_all");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter_batched(
                || PropagationState::new(&fx.graph, fx.signal.clone()).unwrap(),
                |mut state| pool.install(|| propagate_all(&fx.graph, &cfg, &mut state).unwrap()),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn bench_updates(c: &mut Criterion) {
    let fx = fixture();
    let cfg = config();
    let mut group = c.benchmark_group("updates");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("sequential", &name), |b| {
            b.iter_batched(
                || (fx.graph.clone(), fx.state.clone()),
                |(mut g, mut state)| pool.install(|| apply_events(&mut g, &mut state, &cfg, &fx.events).unwrap()),
                BatchSize::LargeInput,
            )
        });
        group.bench_function(BenchmarkId::new("batch", &name), |b| {
            b.iter_batched(
                || (fx.graph.clone(), fx.state.clone()),
                |(mut g, mut state)| pool.install(|| batch_update(&mut g, &mut state, &cfg, &fx.events).unwrap()),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_scratch, bench_updates);
criterion_main!(benches);
