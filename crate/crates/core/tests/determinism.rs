//! Identical inputs give byte-identical outputs.

use dagconf::config::HarnessConfig;
use dagconf::conftest::Harness;
use dagconf::metrics::MetricsRecord;
use dagconf::sim::{SimConfig, SimFlags, Simulation};
use dagconf::trace::{Digest, TraceStore};
use dagconf::violations::{flags_for, ViolationId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn artifacts(cfg: &SimConfig, flags: SimFlags) -> (Digest, String) {
    let run = Simulation::run(cfg, flags).unwrap();
    let metrics = MetricsRecord::compute(&run.summary).to_json(&HarnessConfig::default().metrics.enabled);
    (Digest::of(run.trace.to_jsonl().as_bytes()), metrics)
}

fn random_config(rng: &mut ChaCha8Rng) -> SimConfig {
    let n = rng.gen_range(4..=12);
    SimConfig {
        num_nodes: n,
        number_faulty: rng.gen_range(0..=(n - 1) / 3),
        failure_chance: rng.gen_range(0.0..1.0),
        iteration_duration_ms: rng.gen_range(10.0..30.0),
        start_stagger_iterations: rng.gen_range(0.0..6.0),
        seed: rng.gen(),
        ..Default::default()
    }
}

#[test]
fn sim_runs_repeat_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let cfg = random_config(&mut rng);
        assert_eq!(artifacts(&cfg, SimFlags::default()), artifacts(&cfg, SimFlags::default()), "{cfg:?}");
    }
}

#[test]
fn model_walk_sets_repeat_exactly() {
    let set = |seed| {
        let mut cfg = HarnessConfig::default();
        cfg.workflow.seed = seed;
        cfg.workflow.depth = 400;
        let h = Harness::new(cfg).unwrap();
        let out = h.workflow_ii(0, &mut TraceStore::in_memory()).unwrap();
        out.traces.iter().map(|t| t.to_jsonl()).collect::<Vec<_>>()
    };
    for seed in [0, 1, 99] {
        assert_eq!(set(seed), set(seed));
    }
    assert_ne!(set(0), set(1));
}

#[test]
fn model_side_flags_leave_the_simulator_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = random_config(&mut rng);
    let pristine = artifacts(&cfg, SimFlags::default());
    for v in ViolationId::ALL {
        let (model, sim) = flags_for(Some(v));
        if model != Default::default() {
            assert_eq!(sim, SimFlags::default(), "{v}");
            assert_eq!(artifacts(&cfg, sim), pristine, "{v}");
        }
    }
}

#[test]
fn grid_batches_repeat_exactly() {
    let h = Harness::new(HarnessConfig { seeded_violation: Some("V8".parse().unwrap()), ..Default::default() }).unwrap();
    let a = h.workflow_i(2, &mut TraceStore::in_memory()).unwrap();
    let b = h.workflow_i(2, &mut TraceStore::in_memory()).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.traces, b.traces);
    let key = |o: &dagconf::conftest::BatchOutcome| o.violations.iter().map(|v| (v.trace_hash, v.step)).collect::<Vec<_>>();
    assert_eq!(key(&a), key(&b));
}
