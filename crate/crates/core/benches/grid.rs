use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dagconf::config::HarnessConfig;
use dagconf::conftest::Harness;
use dagconf::trace::TraceStore;

fn harness(parallel: bool, walks: usize) -> Harness {
    let mut cfg = HarnessConfig::default();
    cfg.workflow.grid_values = 2;
    cfg.workflow.walks = walks;
    cfg.workflow.depth = 500;
    cfg.workflow.parallel = parallel;
    Harness::new(cfg).unwrap()
}

fn workflow_i(c: &mut Criterion) {
    let mut g = c.benchmark_group("workflow_i_grid_3x2");
    g.sample_size(10);
    for (name, parallel) in [("sequential", false), ("parallel", true)] {
        let h = harness(parallel, 0);
        g.bench_with_input(BenchmarkId::from_parameter(name), &h, |b, h| {
            b.iter(|| h.workflow_i(0, &mut TraceStore::in_memory()).unwrap())
        });
    }
    g.finish();
}

fn workflow_ii(c: &mut Criterion) {
    let mut g = c.benchmark_group("workflow_ii_16_walks");
    g.sample_size(10);
    for (name, parallel) in [("sequential", false), ("parallel", true)] {
        let h = harness(parallel, 16);
        g.bench_with_input(BenchmarkId::from_parameter(name), &h, |b, h| {
            b.iter(|| h.workflow_ii(0, &mut TraceStore::in_memory()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, workflow_i, workflow_ii);
criterion_main!(benches);
