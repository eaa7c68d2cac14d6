use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::ModelConfig;
use crate::trace::{AbstractAction, Digest, NodeId, Round, Trace, VertexId, Wave};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InvariantReport {
    pub leader_consistency: bool,
    pub leader_monotonicity: bool,
    pub dag_consistency: bool,
    /// Honest nodes committing the same wave produced equal block digests.
    pub block_consistency: bool,
    pub first_violation: Option<(usize, String)>,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Safety properties over a trace, evaluated from action parameters alone.
///
/// Nodes in the configured Byzantine set are excluded; a node added by
/// reconfiguration counts as honest.
pub fn check_invariants(t: &Trace, cfg: &ModelConfig) -> InvariantReport {
    let honest = |p: NodeId| !cfg.byzantine.contains(&p);
    let mut report = InvariantReport {
        leader_consistency: true,
        leader_monotonicity: true,
        dag_consistency: true,
        block_consistency: true,
        first_violation: None,
    };
    let mut leaders: BTreeMap<Wave, (NodeId, VertexId)> = BTreeMap::new();
    let mut blocks: BTreeMap<Wave, (NodeId, Digest)> = BTreeMap::new();
    let mut last: BTreeMap<NodeId, Wave> = BTreeMap::new();
    let mut slots: BTreeMap<(NodeId, Round), (NodeId, VertexId)> = BTreeMap::new();
    let mut broken: BTreeSet<&'static str> = BTreeSet::new();

    for (i, step) in t.steps.iter().enumerate() {
        let mut fail = |name: &'static str, msg: String| {
            broken.insert(name);
            if report.first_violation.is_none() {
                report.first_violation = Some((i, msg));
            }
        };
        match step.action {
            AbstractAction::CommitLeader { p, w, v, block } if honest(p) => {
                match leaders.get(&w) {
                    Some(&(q, u)) if u != v => fail(
                        "leader_consistency",
                        format!("wave {w}: node {p} committed {v:?} but node {q} committed {u:?}"),
                    ),
                    Some(_) => {}
                    None => {
                        leaders.insert(w, (p, v));
                    }
                }
                match blocks.get(&w) {
                    Some(&(q, b)) if b != block => fail(
                        "block_consistency",
                        format!(
                            "wave {w}: node {p} block {} differs from node {q} block {}",
                            block.short(),
                            b.short()
                        ),
                    ),
                    Some(_) => {}
                    None => {
                        blocks.insert(w, (p, block));
                    }
                }
                if let Some(&prev) = last.get(&p) {
                    if w <= prev {
                        fail(
                            "leader_monotonicity",
                            format!("node {p} committed wave {w} after wave {prev}"),
                        );
                    }
                }
                last.insert(p, w);
            }
            AbstractAction::CreateVertex { p, r, v } if honest(p) => {
                record_slot(&mut slots, p, r, p, v, &mut fail);
            }
            AbstractAction::ReceiveVertex { p, q, r, v } if honest(p) && honest(q) => {
                record_slot(&mut slots, q, r, p, v, &mut fail);
            }
            _ => {}
        }
    }
    report.leader_consistency = !broken.contains("leader_consistency");
    report.leader_monotonicity = !broken.contains("leader_monotonicity");
    report.dag_consistency = !broken.contains("dag_consistency");
    report.block_consistency = !broken.contains("block_consistency");
    report
}

fn record_slot(
    slots: &mut BTreeMap<(NodeId, Round), (NodeId, VertexId)>,
    creator: NodeId,
    r: Round,
    holder: NodeId,
    v: VertexId,
    fail: &mut impl FnMut(&'static str, String),
) {
    match slots.get(&(creator, r)) {
        Some(&(other, u)) if u != v => fail(
            "dag_consistency",
            format!("slot ({creator}, {r}) holds {v:?} at node {holder} but {u:?} at node {other}"),
        ),
        Some(_) => {}
        None => {
            slots.insert((creator, r), (holder, v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{vertex_id, TraceMeta, TraceSource, TraceStep};

    fn trace(actions: Vec<AbstractAction>) -> Trace {
        Trace {
            meta: TraceMeta {
                source: TraceSource::Model,
                seed: 0,
                config_id: String::new(),
            },
            init_digest: Digest::default(),
            steps: actions
                .into_iter()
                .map(|action| TraceStep {
                    action,
                    post_digest: Digest::default(),
                    post_state: None,
                })
                .collect(),
        }
    }

    fn commit(p: NodeId, w: Wave, v: VertexId, block: &[u8]) -> AbstractAction {
        AbstractAction::CommitLeader {
            p,
            w,
            v,
            block: Digest::of(block),
        }
    }

    #[test]
    fn conflicting_commits_break_leader_consistency() {
        let cfg = ModelConfig::uniform(4, 1, 10);
        let a = vertex_id(0, 1, &[], 0);
        let b = vertex_id(1, 1, &[], 0);
        let r = check_invariants(&trace(vec![commit(1, 1, a, b"x"), commit(2, 1, b, b"x")]), &cfg);
        assert!(!r.leader_consistency);
        assert_eq!(r.first_violation.unwrap().0, 1);
    }

    #[test]
    fn out_of_order_waves_break_monotonicity() {
        let cfg = ModelConfig::uniform(4, 1, 10);
        let a = vertex_id(0, 1, &[], 0);
        let t = trace(vec![commit(1, 1, a, b"1"), commit(1, 3, a, b"3"), commit(1, 2, a, b"2")]);
        let r = check_invariants(&t, &cfg);
        assert!(!r.leader_monotonicity);
        assert!(r.leader_consistency);
        assert_eq!(r.first_violation.unwrap().0, 2);
    }

    #[test]
    fn byzantine_commits_are_ignored() {
        let cfg = ModelConfig::uniform(4, 1, 10);
        let a = vertex_id(0, 1, &[], 0);
        let b = vertex_id(1, 1, &[], 0);
        let r = check_invariants(&trace(vec![commit(0, 1, a, b"x"), commit(2, 1, b, b"y")]), &cfg);
        assert!(r.holds());
    }

    #[test]
    fn differing_blocks_break_block_consistency() {
        let cfg = ModelConfig::uniform(4, 1, 10);
        let a = vertex_id(0, 1, &[], 0);
        let r = check_invariants(&trace(vec![commit(1, 1, a, b"x"), commit(2, 1, a, b"y")]), &cfg);
        assert!(!r.block_consistency);
        assert!(r.leader_consistency);
    }
}
