//! Model walks replayed in the simulator, then abstracted back.

use dagconf::conftest::sim_for_model;
use dagconf::mapping::{abstract_trace, replay_check, MappingTable};
use dagconf::model::{model_random_walk, ModelConfig};
use dagconf::sim::{SimConfig, SimFlags};
use dagconf::trace::Trace;

fn check_round_trip(model: &ModelConfig, walks: usize, depth: usize, seed: u64) -> usize {
    let mapper = MappingTable::default().compile().unwrap();
    let sim = sim_for_model(model, &SimConfig::default()).unwrap();
    let traces = model_random_walk(model, walks, depth, seed).unwrap();
    for (i, t) in traces.iter().enumerate() {
        let r = replay_check(t, model, &sim, SimFlags::default(), &mapper).unwrap();
        assert!(r.divergence.is_none(), "walk {i}: {:?}", r.divergence);
        let back = abstract_trace(&r.concrete, &mapper).unwrap();
        assert_eq!(back.init_digest, t.init_digest, "walk {i}");
        // The implementation may run ahead of the last model step.
        assert!(back.len() >= t.len(), "walk {i}");
        for (j, (a, b)) in t.steps.iter().zip(&back.steps).enumerate() {
            assert_eq!(a.action, b.action, "walk {i} step {j}");
            assert_eq!(a.post_digest, b.post_digest, "walk {i} step {j}");
        }
    }
    traces.len()
}

#[test]
fn hundred_walks_round_trip() {
    let mut m = ModelConfig::uniform(4, 1, 30);
    m.reconfigure_round = Some(10);
    assert_eq!(check_round_trip(&m, 100, 300, 11), 100);
}

#[test]
fn round_trip_with_reconfiguration_and_stakes() {
    let mut m = ModelConfig::uniform(5, 1, 12);
    m.stakes = [(0, 1), (1, 3), (2, 2), (3, 2), (4, 1)].into_iter().collect();
    m.reconfigure_round = Some(4);
    assert_eq!(check_round_trip(&m, 10, 2000, 5), 10);
}

#[test]
fn replay_rejects_a_tampered_step() {
    let mapper = MappingTable::default().compile().unwrap();
    let m = ModelConfig::uniform(4, 1, 10);
    let sim = sim_for_model(&m, &SimConfig::default()).unwrap();
    let t = model_random_walk(&m, 1, 200, 2).unwrap().remove(0);
    let mut bad: Trace = t.clone();
    let k = bad.len() / 2;
    bad.steps[k].post_digest = bad.steps[0].post_digest;
    let r = replay_check(&bad, &m, &sim, SimFlags::default(), &mapper).unwrap();
    let d = r.divergence.expect("tampered digest must diverge");
    assert_eq!(d.step, Some(k));
    assert_eq!(r.confirmed, k);
}
