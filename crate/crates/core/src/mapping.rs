//! Abstraction of implementation traces into model traces, and the reverse
//! direction: replaying a model trace inside a driven simulation.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::concrete::{ConcreteAction, ConcreteHeader, ConcreteStep, ConcreteTrace, DeltaOp, StateDelta};
use crate::consensus::fields;
use crate::error::{HarnessError, MappingError};
use crate::model::ModelState;
use crate::model::ModelConfig;
use crate::sim::{Command, SimConfig, SimFlags, Simulation};
use crate::trace::{
    AbstractAction, AbstractState, ActionKind, Digest, LeaderEntry, Params, Trace, TraceMeta, TraceSource, TraceStep,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingRule {
    pub action: ActionKind,
    /// Concrete kinds that together make up the action, in emission order.
    pub sources: Vec<String>,
    /// Abstract parameter name to `"<source kind>.<param>"`.
    pub params: BTreeMap<String, String>,
}

/// Which concrete state fields project onto the abstract `dag`, `round` and
/// `leaders` variables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateProjection {
    pub dag: String,
    pub round: String,
    pub leaders: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingTable {
    /// Concrete kinds with no abstract counterpart.
    pub internal: Vec<String>,
    pub rules: Vec<MappingRule>,
    pub state: StateProjection,
}

impl Default for MappingTable {
    fn default() -> Self {
        let rule = |action, sources: &[&str], params: &[(&str, &str)]| MappingRule {
            action,
            sources: sources.iter().map(|s| s.to_string()).collect(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        };
        MappingTable {
            internal: [
                "impl.timer_fire",
                "impl.broadcast",
                "impl.deliver",
                "impl.buffer_vertex",
                "impl.drop_duplicate",
                "impl.flag_equivocation",
                "impl.crash",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            rules: vec![
                rule(ActionKind::NextRound, &["impl.advance_round"], &[("p", "impl.advance_round.node")]),
                rule(
                    ActionKind::CreateVertex,
                    &["impl.create_vertex"],
                    &[
                        ("p", "impl.create_vertex.node"),
                        ("r", "impl.create_vertex.round"),
                        ("v", "impl.create_vertex.vertex"),
                    ],
                ),
                rule(
                    ActionKind::ReceiveVertex,
                    &["impl.accept_vertex"],
                    &[
                        ("p", "impl.accept_vertex.node"),
                        ("q", "impl.accept_vertex.creator"),
                        ("r", "impl.accept_vertex.round"),
                        ("v", "impl.accept_vertex.vertex"),
                    ],
                ),
                rule(
                    ActionKind::CommitLeader,
                    &["impl.commit_leader", "impl.emit_block"],
                    &[
                        ("p", "impl.commit_leader.node"),
                        ("w", "impl.commit_leader.wave"),
                        ("v", "impl.commit_leader.vertex"),
                        ("block", "impl.emit_block.block"),
                    ],
                ),
                rule(
                    ActionKind::Equivocate,
                    &["impl.equivocate"],
                    &[
                        ("b", "impl.equivocate.node"),
                        ("r", "impl.equivocate.round"),
                        ("v", "impl.equivocate.vertex"),
                    ],
                ),
                rule(ActionKind::Reconfigure, &["impl.admit_node"], &[("n", "impl.admit_node.new_node")]),
            ],
            state: StateProjection {
                dag: fields::LOCAL_DAG.into(),
                round: fields::CURRENT_ROUND.into(),
                leaders: fields::COMMIT_LOG.into(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Role {
    Internal,
    Member { rule: usize, index: usize },
}

#[derive(Clone, Debug)]
struct CompiledRule {
    action: ActionKind,
    sources: Vec<String>,
    /// (abstract name, source index, concrete param)
    params: Vec<(String, usize, String)>,
}

/// A validated, indexed [`MappingTable`].
#[derive(Clone, Debug)]
pub struct Mapper {
    roles: HashMap<String, Role>,
    rules: Vec<CompiledRule>,
    state: StateProjection,
}

impl MappingTable {
    pub fn compile(&self) -> Result<Mapper, MappingError> {
        let bad = |m: String| Err(MappingError::Table(m));
        let mut roles = HashMap::new();
        for k in &self.internal {
            if roles.insert(k.clone(), Role::Internal).is_some() {
                return bad(format!("{k:?} listed twice"));
            }
        }
        let mut rules = Vec::new();
        for kind in ActionKind::ALL {
            let matching: Vec<&MappingRule> = self.rules.iter().filter(|r| r.action == kind).collect();
            if matching.len() != 1 {
                return bad(format!("{} needs exactly one rule, found {}", kind.name(), matching.len()));
            }
        }
        for (ri, r) in self.rules.iter().enumerate() {
            if r.sources.is_empty() {
                return bad(format!("rule for {} has no sources", r.action.name()));
            }
            for (index, s) in r.sources.iter().enumerate() {
                if roles.insert(s.clone(), Role::Member { rule: ri, index }).is_some() {
                    return bad(format!("{s:?} is mapped more than once"));
                }
            }
            let required = r.action.required_params();
            if r.params.len() != required.len() || !required.iter().all(|k| r.params.contains_key(*k)) {
                return bad(format!("rule for {} must bind exactly {required:?}", r.action.name()));
            }
            let mut params = Vec::new();
            for (name, reference) in &r.params {
                let Some((src, param)) = reference.rsplit_once('.') else {
                    return bad(format!("param reference {reference:?} is not <source>.<param>"));
                };
                let Some(si) = r.sources.iter().position(|s| s == src) else {
                    return bad(format!("{reference:?} names a kind outside the rule's sources"));
                };
                params.push((name.clone(), si, param.to_string()));
            }
            rules.push(CompiledRule {
                action: r.action,
                sources: r.sources.clone(),
                params,
            });
        }
        let st = &self.state;
        if st.dag == st.round || st.dag == st.leaders || st.round == st.leaders {
            return bad("state projection fields must be distinct".into());
        }
        Ok(Mapper {
            roles,
            rules,
            state: self.state.clone(),
        })
    }
}

impl Mapper {
    /// Projects one delta onto the abstract state.
    fn project(&self, s: &mut AbstractState, d: &StateDelta) -> Result<(), MappingError> {
        let f = d.field.as_str();
        match &d.op {
            DeltaOp::MapInsert { round, creator, vertex } if f == self.state.dag => {
                s.insert_vertex(d.node, *round, *creator, *vertex)
            }
            DeltaOp::Set { value } if f == self.state.round => s.set_round(d.node, *value),
            DeltaOp::Append { wave, vertex } if f == self.state.leaders => s.push_leader(
                d.node,
                LeaderEntry {
                    wave: *wave,
                    vertex: Some(*vertex),
                },
            ),
            op if [&self.state.dag, &self.state.round, &self.state.leaders].contains(&&d.field) => {
                return Err(MappingError::Projection(format!("operation {op:?} does not fit field {f:?}")));
            }
            // fields outside the projection are not part of the abstract state
            _ => {}
        }
        Ok(())
    }
}

/// Streaming abstraction of concrete steps.
pub struct Abstractor<'m> {
    mapper: &'m Mapper,
    state: AbstractState,
    init_digest: Digest,
    open: Option<(usize, Vec<ConcreteAction>)>,
    position: usize,
    keep_states: bool,
}

impl<'m> Abstractor<'m> {
    pub fn new(mapper: &'m Mapper, header: &ConcreteHeader) -> Result<Self, MappingError> {
        let mut state = AbstractState::new(header.faulty.iter().copied());
        for d in &header.init {
            mapper.project(&mut state, d)?;
        }
        Ok(Abstractor {
            mapper,
            init_digest: state.digest(),
            state,
            open: None,
            position: 0,
            keep_states: false,
        })
    }

    /// Attach the full post state to every emitted step.
    pub fn keep_states(mut self) -> Self {
        self.keep_states = true;
        self
    }

    pub fn init_digest(&self) -> Digest {
        self.init_digest
    }

    pub fn state(&self) -> &AbstractState {
        &self.state
    }

    /// Consumes one concrete step; returns the abstract step it completes,
    /// if any.
    pub fn feed(&mut self, step: &ConcreteStep) -> Result<Option<TraceStep>, MappingError> {
        let at = self.position;
        self.position += 1;
        let kind = &step.action.kind;
        let role = self.mapper.roles.get(kind).copied();
        if let Some((rule, got)) = &self.open {
            let r = &self.mapper.rules[*rule];
            let want = &r.sources[got.len()];
            if want != kind {
                return Err(MappingError::BrokenGroup {
                    step: at,
                    group: r.sources.clone(),
                    found: kind.clone(),
                });
            }
        }
        for d in &step.delta {
            self.mapper.project(&mut self.state, d)?;
        }
        let (rule, mut got) = match (self.open.take(), role) {
            (Some(open), _) => open,
            (None, None) => {
                return Err(MappingError::Unmapped {
                    step: at,
                    kind: kind.clone(),
                })
            }
            (None, Some(Role::Internal)) => return Ok(None),
            (None, Some(Role::Member { rule, index: 0 })) => (rule, Vec::new()),
            (None, Some(Role::Member { rule, .. })) => {
                return Err(MappingError::BrokenGroup {
                    step: at,
                    group: self.mapper.rules[rule].sources.clone(),
                    found: kind.clone(),
                })
            }
        };
        got.push(step.action.clone());
        let r = &self.mapper.rules[rule];
        if got.len() < r.sources.len() {
            self.open = Some((rule, got));
            return Ok(None);
        }
        let mut params = Params::new();
        for (name, si, param) in &r.params {
            let v = got[*si].params.get(param).ok_or_else(|| MappingError::Param {
                step: at,
                msg: format!("{} has no param {param:?}", r.sources[*si]),
            })?;
            params.insert(name.clone(), v.clone());
        }
        let action = AbstractAction::from_params(r.action, &params).map_err(|e| MappingError::Param {
            step: at,
            msg: e.to_string(),
        })?;
        Ok(Some(TraceStep {
            action,
            post_digest: self.state.digest(),
            post_state: self.keep_states.then(|| self.state.clone()),
        }))
    }

    pub fn finish(&self) -> Result<(), MappingError> {
        match &self.open {
            Some((rule, _)) => Err(MappingError::IncompleteGroup(self.mapper.rules[*rule].sources.clone())),
            None => Ok(()),
        }
    }
}

fn abstract_with(ct: &ConcreteTrace, mapper: &Mapper, keep: bool) -> Result<Trace, MappingError> {
    if ct.steps.is_empty() {
        return Err(MappingError::EmptyConcrete);
    }
    let mut a = Abstractor::new(mapper, &ct.header)?;
    if keep {
        a = a.keep_states();
    }
    let mut steps = Vec::new();
    for s in &ct.steps {
        if let Some(t) = a.feed(s)? {
            steps.push(t);
        }
    }
    a.finish()?;
    if steps.is_empty() {
        return Err(MappingError::EmptyAbstract);
    }
    Ok(Trace {
        meta: TraceMeta {
            source: TraceSource::Simulator,
            seed: ct.header.seed,
            config_id: ct.header.config_id.clone(),
        },
        init_digest: a.init_digest(),
        steps,
    })
}

/// The abstraction function: drops internal steps, merges grouped steps and
/// projects state deltas.
pub fn abstract_trace(ct: &ConcreteTrace, mapper: &Mapper) -> Result<Trace, MappingError> {
    abstract_with(ct, mapper, false)
}

/// As [`abstract_trace`], with every step's full post state attached.
pub fn abstract_trace_with_states(ct: &ConcreteTrace, mapper: &Mapper) -> Result<Trace, MappingError> {
    abstract_with(ct, mapper, true)
}

/// Implementation abstract state right after abstract step `step`, or the
/// initial state for `None`.
pub fn abstract_state_at(ct: &ConcreteTrace, mapper: &Mapper, step: Option<usize>) -> Result<AbstractState, MappingError> {
    let mut a = Abstractor::new(mapper, &ct.header)?;
    let Some(target) = step else {
        return Ok(a.state().clone());
    };
    let mut produced = 0;
    for s in &ct.steps {
        if a.feed(s)?.is_some() {
            if produced == target {
                return Ok(a.state().clone());
            }
            produced += 1;
        }
    }
    Err(MappingError::Projection(format!("trace has only {produced} abstract steps")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    /// The implementation could not perform the model's step.
    NotExecutable,
    /// The implementation performed a different step.
    ActionMismatch,
    /// Same step, different resulting abstract state.
    DigestMismatch,
    /// The initial abstract states already differ.
    InitMismatch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub kind: DivergenceKind,
    /// Index of the model step, `None` for the initial state.
    pub step: Option<usize>,
    pub expected: Option<AbstractAction>,
    pub actual: Option<AbstractAction>,
    pub detail: String,
    /// Model state vs implementation state, field by field.
    pub diff: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ReplayReport {
    pub divergence: Option<Divergence>,
    /// Concrete steps the driven simulation produced.
    pub concrete: ConcreteTrace,
    /// Model steps confirmed before the divergence (or all of them).
    pub confirmed: usize,
}

fn command_for(a: &AbstractAction) -> Option<Command> {
    Some(match *a {
        AbstractAction::NextRound { p } => Command::Advance(p),
        AbstractAction::CreateVertex { .. } => return None,
        AbstractAction::ReceiveVertex { p, q, v, .. } => Command::Deliver {
            from: q,
            to: p,
            vertex: v,
        },
        AbstractAction::CommitLeader { p, .. } => Command::Commit(p),
        AbstractAction::Equivocate { b, r, .. } => Command::Equivocate { node: b, round: r },
        AbstractAction::Reconfigure { n } => Command::Reconfigure(n),
    })
}

/// Drives a simulation through the steps of a model trace. Each step is
/// first matched against abstract steps the implementation already produced
/// (a `NextRound` command also creates the vertex); otherwise it is turned
/// into a command. Steps the implementation produces beyond the end of the
/// model trace are not compared.
pub fn replay_check(
    t: &Trace,
    model: &ModelConfig,
    sim: &SimConfig,
    flags: SimFlags,
    mapper: &Mapper,
) -> Result<ReplayReport, HarnessError> {
    let mut driven = Simulation::driven(sim, flags)?;
    let mut ms = ModelState::init(model)?;
    let mut abs = Abstractor::new(mapper, &driven.trace().header)?.keep_states();
    let mut fed = 0;
    let mut queue: VecDeque<TraceStep> = VecDeque::new();
    let report = |sim: &Simulation, divergence, confirmed| ReplayReport {
        divergence,
        concrete: sim.trace().clone(),
        confirmed,
    };
    if abs.init_digest() != t.init_digest {
        let diff = ms.abstract_state().diff(abs.state());
        let d = Divergence {
            kind: DivergenceKind::InitMismatch,
            step: None,
            expected: None,
            actual: None,
            detail: format!("model init {} vs implementation init {}", t.init_digest.short(), abs.init_digest().short()),
            diff,
        };
        return Ok(report(&driven, Some(d), 0));
    }
    for (i, step) in t.steps.iter().enumerate() {
        if ms.apply(&step.action).is_err() {
            return Err(HarnessError::Config(crate::error::ConfigError::Invalid(format!(
                "model trace step {i} ({}) is not enabled under the model config",
                step.action
            ))));
        }
        if queue.is_empty() {
            let exec = match command_for(&step.action) {
                Some(cmd) => driven.execute(&cmd),
                None => Err("no command reaches this action directly".into()),
            };
            match exec {
                Ok(_) => {
                    for s in &driven.trace().steps[fed..] {
                        if let Some(a) = abs.feed(s)? {
                            queue.push_back(a);
                        }
                    }
                    fed = driven.trace().steps.len();
                }
                Err(why) => {
                    let d = Divergence {
                        kind: DivergenceKind::NotExecutable,
                        step: Some(i),
                        expected: Some(step.action.clone()),
                        actual: None,
                        detail: why,
                        diff: vec![],
                    };
                    return Ok(report(&driven, Some(d), i));
                }
            }
        }
        let Some(got) = queue.pop_front() else {
            let d = Divergence {
                kind: DivergenceKind::NotExecutable,
                step: Some(i),
                expected: Some(step.action.clone()),
                actual: None,
                detail: "the implementation produced no model-level step".into(),
                diff: vec![],
            };
            return Ok(report(&driven, Some(d), i));
        };
        let impl_state = got.post_state.as_ref().expect("kept states");
        if got.action != step.action {
            let d = Divergence {
                kind: DivergenceKind::ActionMismatch,
                step: Some(i),
                expected: Some(step.action.clone()),
                actual: Some(got.action.clone()),
                detail: format!("model took {} but the implementation took {}", step.action, got.action),
                diff: ms.abstract_state().diff(impl_state),
            };
            return Ok(report(&driven, Some(d), i));
        }
        if got.post_digest != step.post_digest {
            let d = Divergence {
                kind: DivergenceKind::DigestMismatch,
                step: Some(i),
                expected: Some(step.action.clone()),
                actual: Some(got.action.clone()),
                detail: format!(
                    "post digest {} vs {}",
                    step.post_digest.short(),
                    got.post_digest.short()
                ),
                diff: ms.abstract_state().diff(impl_state),
            };
            return Ok(report(&driven, Some(d), i));
        }
    }
    abs.finish()?;
    let live = driven.snapshot();
    if &live != abs.state() {
        let d = Divergence {
            kind: DivergenceKind::DigestMismatch,
            step: t.steps.len().checked_sub(1),
            expected: None,
            actual: None,
            detail: "node state disagrees with the emitted deltas".into(),
            diff: abs.state().diff(&live),
        };
        return Ok(report(&driven, Some(d), t.steps.len()));
    }
    Ok(report(&driven, None, t.steps.len()))
}
