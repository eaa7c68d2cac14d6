//! Workflow I / II contracts and the alternating loop.

use std::collections::HashSet;

use dagconf::config::HarnessConfig;
use dagconf::conftest::{Classification, Harness, StopReason, Trigger, Workflow};
use dagconf::trace::TraceStore;
use dagconf::violations::ViolationId;

fn harness(v: Option<&str>, tweak: impl FnOnce(&mut HarnessConfig)) -> Harness {
    let mut cfg = HarnessConfig { seeded_violation: v.map(|v| v.parse().unwrap()), ..Default::default() };
    tweak(&mut cfg);
    Harness::new(cfg).unwrap()
}

#[test]
fn full_grid_runs_every_combination() {
    let h = harness(None, |_| {});
    let mut store = TraceStore::in_memory();
    let out = h.workflow_i(0, &mut store).unwrap();
    assert_eq!(out.summary.runs, 27);
    assert_eq!(out.summary.new_traces + out.summary.duplicates, 27);
    assert!(out.violations.is_empty());
    assert_eq!(store.len(), out.summary.new_traces);
}

#[test]
fn single_value_grid_runs_once() {
    let h = harness(None, |c| c.workflow.grid_values = 1);
    let mut store = TraceStore::in_memory();
    let out = h.workflow_i(0, &mut store).unwrap();
    assert_eq!((out.summary.runs, out.traces.len(), store.len()), (1, 1, 1));
}

#[test]
fn walks_are_never_returned_twice() {
    let h = harness(None, |c| c.workflow.depth = 300);
    let mut store = TraceStore::in_memory();
    let mut seen = HashSet::new();
    for _ in 0..2 {
        let before = store.len();
        let out = h.workflow_ii(0, &mut store).unwrap();
        assert_eq!(out.traces.len(), 10);
        assert_eq!(store.len() - before, out.traces.len());
        for t in &out.traces {
            assert!(seen.insert(t.hash()));
        }
    }
}

#[test]
fn saturated_state_space_signals_exhaustion() {
    let h = harness(None, |c| {
        c.workflow.depth = 1;
        c.workflow.walks = 100;
        c.workflow.retry_bound = 5;
    });
    let mut store = TraceStore::in_memory();
    let out = h.workflow_ii(0, &mut store).unwrap();
    assert!(out.summary.exhausted);
    assert!(out.traces.len() < 100);
    let report = h.conf_test(&mut store).unwrap();
    assert_ne!(report.stop, StopReason::Violation);
}

#[test]
fn zero_budget_gives_an_empty_report() {
    let h = harness(None, |c| c.workflow.budget = 0);
    let r = h.conf_test(&mut TraceStore::in_memory()).unwrap();
    assert!(r.batches.is_empty() && r.violations.is_empty());
    assert_eq!(r.exit_code(), 0);
}

#[test]
fn clean_build_passes_a_short_loop() {
    let h = harness(None, |c| {
        c.workflow.budget = 4;
        c.workflow.seed = 7;
    });
    let mut store = TraceStore::in_memory();
    let r = h.conf_test(&mut store).unwrap();
    assert!(r.violations.is_empty());
    assert_eq!(r.batches.len(), 4);
    assert!(r.batches.iter().all(|b| b.new_traces > 0));
    assert_eq!(r.stop, StopReason::Budget);
}

#[test]
fn first_violation_stops_in_the_first_pass() {
    let h = harness(Some("V1"), |c| c.workflow.budget = 4);
    let r = h.conf_test(&mut TraceStore::in_memory()).unwrap();
    assert_eq!(r.stop, StopReason::Violation);
    assert_eq!(r.batches.len(), 1);
    let v = &r.violations[0];
    assert_eq!((v.classification, v.workflow), (Classification::TypeI, Workflow::I));
    assert_eq!(v.fix_site, "model or implementation");
    assert_eq!(r.exit_code(), 1);
}

#[test]
fn minimum_configurations_expose_each_violation() {
    for v in ViolationId::ALL {
        let info = v.info();
        let (a, b) = info.min_config.split_once('/').unwrap();
        let mut store = TraceStore::in_memory();
        let out = if let Some(depth) = b.strip_suffix('K') {
            let h = harness(Some(&v.to_string()), |c| {
                c.workflow.walks = a.parse().unwrap();
                c.workflow.depth = depth.parse::<usize>().unwrap() * 1000;
            });
            h.workflow_ii(0, &mut store).unwrap()
        } else {
            let h = harness(Some(&v.to_string()), |c| {
                c.fuzz.parameters.truncate(a.parse().unwrap());
                c.workflow.grid_values = b.parse().unwrap();
            });
            h.workflow_i(0, &mut store).unwrap()
        };
        let got = out.violations.first().map(|x| x.classification);
        assert_eq!(got, Some(info.expected), "{v} at {}", info.min_config);
    }
}

#[test]
fn reports_reproduce_from_their_trigger() {
    for (v, wf) in [("V3", Workflow::I), ("V6", Workflow::I), ("V10", Workflow::II)] {
        let h = harness(Some(v), |_| {});
        let mut store = TraceStore::in_memory();
        let out = match wf {
            Workflow::I => h.workflow_i(0, &mut store).unwrap(),
            Workflow::II => h.workflow_ii(0, &mut store).unwrap(),
        };
        let first = &out.violations[0];
        let again = h.reproduce(first).unwrap().expect("trigger reproduces");
        assert_eq!(again.classification, first.classification, "{v}");
        assert_eq!((again.step, &again.reason, &again.diff), (first.step, &first.reason, &first.diff), "{v}");
        assert_eq!(again.trace, first.trace, "{v}");
        assert_eq!(again.trace_hash, first.trace_hash, "{v}");
        match (&first.trigger, wf) {
            (Trigger::Grid { .. }, Workflow::I) | (Trigger::Walk { .. }, Workflow::II) => {}
            (t, _) => panic!("{v}: unexpected trigger {t:?}"),
        }
    }
}

#[test]
fn all_violations_mode_keeps_going() {
    let mut h = harness(Some("V3"), |c| {
        c.workflow.budget = 2;
        c.workflow.grid_values = 2;
    });
    h.all_violations = true;
    let mut store = TraceStore::in_memory();
    let r = h.conf_test(&mut store).unwrap();
    assert!(r.violations.len() > 1);
    assert_eq!(r.batches.len(), 2);
    let hashes: HashSet<_> = r.violations.iter().map(|v| v.trace_hash).collect();
    assert_eq!(hashes.len(), r.violations.len());
    assert!(hashes.iter().all(|h| store.contains(h)));
}

#[test]
fn parallel_and_sequential_batches_agree() {
    let par = harness(Some("V6"), |c| c.workflow.grid_values = 2);
    let seq = harness(Some("V6"), |c| {
        c.workflow.grid_values = 2;
        c.workflow.parallel = false;
    });
    let a = par.workflow_i(3, &mut TraceStore::in_memory()).unwrap();
    let b = seq.workflow_i(3, &mut TraceStore::in_memory()).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.traces, b.traces);
    assert_eq!(a.violations[0].trace_hash, b.violations[0].trace_hash);
}

#[test]
fn written_report_points_at_counterexamples() {
    let h = harness(Some("V9"), |c| c.workflow.grid_values = 1);
    let mut r = h.conf_test(&mut TraceStore::in_memory()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let v = &json["violations"][0];
    assert_eq!(v["classification"], "type-i");
    let ce = dir.path().join(v["counterexample"].as_str().unwrap());
    let t = dagconf::trace::Trace::load(&ce).unwrap();
    assert_eq!(t.len(), v["step"].as_u64().unwrap() as usize + 1);
    assert!(t.steps.last().unwrap().post_state.is_some());
    assert!(dir.path().join(v["concrete_trace"].as_str().unwrap()).exists());
}
