//! Property-based checks of the model, the simulator and their agreement.

use dagconf::config::FuzzConfig;
use dagconf::conftest::{draw_grid, model_for_sim, sim_for_model};
use dagconf::mapping::{abstract_trace, replay_check, MappingTable};
use dagconf::model::{accept_trace, check_invariants, model_random_walk, ModelConfig, ModelFlags};
use dagconf::sim::{SimConfig, SimFlags, Simulation};
use dagconf::trace::Trace;
use proptest::prelude::*;

fn sim_config() -> impl Strategy<Value = SimConfig> {
    (4u32..=9, 0.0f64..0.6, 5.0f64..30.0, 0.1f64..5.0, 0.0f64..6.0, any::<u64>()).prop_flat_map(
        |(n, fail, iter, delay, stagger, seed)| {
            (0..=(n - 1) / 3).prop_map(move |f| SimConfig {
                num_nodes: n,
                number_faulty: f,
                failure_chance: fail,
                iteration_duration_ms: iter,
                message_send_delay_ms: delay,
                start_stagger_iterations: stagger,
                max_rounds: 16,
                seed,
                ..Default::default()
            })
        },
    )
}

fn model_config() -> impl Strategy<Value = ModelConfig> {
    (4u32..=6, 6u64..=14, prop::option::of(3u64..=8), prop::collection::vec(1u64..=3, 6)).prop_map(
        |(n, bound, reconf, stakes)| {
            let mut m = ModelConfig::uniform(n, 1, bound);
            m.stakes = (0..n).zip(stakes).collect();
            m.reconfigure_round = reconf;
            m
        },
    )
    .prop_filter("byzantine stake below a third", |m| m.validate().is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulator_traces_conform(cfg in sim_config()) {
        let mapper = MappingTable::default().compile().unwrap();
        let run = Simulation::run(&cfg, SimFlags::default()).unwrap();
        let t = abstract_trace(&run.trace, &mapper).unwrap();
        let m = model_for_sim(&cfg, ModelFlags::default());
        let inv = check_invariants(&t, &m);
        prop_assert!(inv.holds(), "{:?}", inv.first_violation);
        let v = accept_trace(&t, &m).unwrap();
        prop_assert!(v.is_accept(), "{:?}", v);
    }

    #[test]
    fn model_walks_are_safe_and_self_accepted(m in model_config(), seed in any::<u64>()) {
        for t in model_random_walk(&m, 3, 600, seed).unwrap() {
            let inv = check_invariants(&t, &m);
            prop_assert!(inv.holds(), "{:?}", inv.first_violation);
            prop_assert!(accept_trace(&t, &m).unwrap().is_accept());
        }
    }

    #[test]
    fn model_walks_replay(m in model_config(), seed in any::<u64>()) {
        let mapper = MappingTable::default().compile().unwrap();
        let sim = sim_for_model(&m, &SimConfig::default()).unwrap();
        for t in model_random_walk(&m, 2, 600, seed).unwrap() {
            let r = replay_check(&t, &m, &sim, SimFlags::default(), &mapper).unwrap();
            prop_assert!(r.divergence.is_none(), "{:?}", r.divergence);
        }
    }

    #[test]
    fn walk_traces_survive_serialization(seed in any::<u64>()) {
        let m = ModelConfig::uniform(4, 1, 8);
        for t in model_random_walk(&m, 2, 200, seed).unwrap() {
            let back = Trace::from_jsonl(&t.to_jsonl()).unwrap();
            prop_assert_eq!(back.hash(), t.hash());
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn grid_has_k_to_the_p_cells_within_range(k in 1usize..=4, p in 1usize..=3, seed in any::<u64>()) {
        let mut fuzz = FuzzConfig::default();
        fuzz.parameters.truncate(p);
        let cells = draw_grid(&fuzz, k, seed);
        prop_assert_eq!(cells.len(), k.pow(p as u32));
        for (i, c) in cells.iter().enumerate() {
            prop_assert_eq!(c.index, i);
            for (name, v) in &c.values {
                let [lo, hi] = fuzz.ranges[name];
                prop_assert!(*v >= lo && *v <= hi);
            }
        }
        prop_assert_eq!(draw_grid(&fuzz, k, seed), cells);
    }
}
