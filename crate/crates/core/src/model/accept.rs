use serde::Serialize;

use super::{GuardError, ModelConfig, ModelState};
use crate::error::ConfigError;
use crate::trace::{AbstractAction, Digest, Trace};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    /// The action's guard does not hold in the model state.
    Guard { detail: String },
    /// The model's successor state differs from the recorded post state.
    Digest { expected: Digest, actual: Digest },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum AcceptVerdict {
    Accept,
    /// `step` is `None` when the initial states already differ.
    Reject {
        step: Option<usize>,
        reason: RejectReason,
    },
}

impl AcceptVerdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, AcceptVerdict::Accept)
    }
}

/// Replays `t` from the model's initial state, checking each step's guard
/// and post-state digest.
pub fn accept_trace(t: &Trace, cfg: &ModelConfig) -> Result<AcceptVerdict, ConfigError> {
    let mut s = ModelState::init(cfg)?;
    let init = s.digest();
    if init != t.init_digest {
        return Ok(AcceptVerdict::Reject {
            step: None,
            reason: RejectReason::Digest {
                expected: t.init_digest,
                actual: init,
            },
        });
    }
    for (i, step) in t.steps.iter().enumerate() {
        if let Err(GuardError { reason, .. }) = s.apply(&step.action) {
            return Ok(AcceptVerdict::Reject {
                step: Some(i),
                reason: RejectReason::Guard { detail: reason },
            });
        }
        let d = s.digest();
        if d != step.post_digest {
            return Ok(AcceptVerdict::Reject {
                step: Some(i),
                reason: RejectReason::Digest {
                    expected: step.post_digest,
                    actual: d,
                },
            });
        }
    }
    Ok(AcceptVerdict::Accept)
}

/// Model state after applying `actions` from init, stopping silently at the
/// first disabled action.
pub fn replay_prefix<'a>(
    cfg: &ModelConfig,
    actions: impl IntoIterator<Item = &'a AbstractAction>,
) -> Result<ModelState, ConfigError> {
    let mut s = ModelState::init(cfg)?;
    for a in actions {
        if s.apply(a).is_err() {
            break;
        }
    }
    Ok(s)
}
