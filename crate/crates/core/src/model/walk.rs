use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelState};
use crate::error::ConfigError;
use crate::trace::{Trace, TraceMeta, TraceSource, TraceStep};

/// Seeded random-walk generator. Successive calls to [`Walker::walk`] draw
/// from one stream, so a walker's output sequence is fixed by its seed.
pub struct Walker {
    cfg: ModelConfig,
    seed: u64,
    rng: ChaCha8Rng,
}

impl Walker {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Walker {
            cfg: cfg.clone(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// One walk of at most `depth` steps. Sampling is uniform over the
    /// canonically ordered enabled set; the walk ends early when nothing is
    /// enabled or every node has reached the round bound.
    pub fn walk(&mut self, depth: usize) -> Trace {
        let mut s = ModelState::init(&self.cfg).expect("validated in new");
        let init_digest = s.digest();
        let mut steps = Vec::new();
        while steps.len() < depth && !s.at_round_bound() {
            let enabled = s.enabled_actions();
            if enabled.is_empty() {
                break;
            }
            let a = enabled[self.rng.gen_range(0..enabled.len())].clone();
            s.apply(&a).expect("enabled actions satisfy their guards");
            steps.push(TraceStep {
                action: a,
                post_digest: s.digest(),
                post_state: None,
            });
        }
        Trace {
            meta: TraceMeta {
                source: TraceSource::Model,
                seed: self.seed,
                config_id: self.cfg.id(),
            },
            init_digest,
            steps,
        }
    }
}

/// `n` walks of depth at most `d` from one seeded stream. Walks that end
/// with zero steps are dropped (traces are non-empty by definition).
pub fn model_random_walk(
    cfg: &ModelConfig,
    n: usize,
    d: usize,
    seed: u64,
) -> Result<Vec<Trace>, ConfigError> {
    let mut w = Walker::new(cfg, seed)?;
    Ok((0..n).map(|_| w.walk(d)).filter(|t| !t.is_empty()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{accept_trace, check_invariants};

    #[test]
    fn walks_are_accepted_and_safe() {
        let cfg = ModelConfig::uniform(4, 1, 12);
        let traces = model_random_walk(&cfg, 5, 400, 11).unwrap();
        assert_eq!(traces.len(), 5);
        for t in &traces {
            assert!(t.len() <= 400);
            assert!(accept_trace(t, &cfg).unwrap().is_accept());
            assert!(check_invariants(t, &cfg).holds());
        }
    }

    #[test]
    fn same_seed_same_walks() {
        let cfg = ModelConfig::uniform(4, 1, 12);
        let a = model_random_walk(&cfg, 3, 200, 5).unwrap();
        let b = model_random_walk(&cfg, 3, 200, 5).unwrap();
        assert_eq!(a, b);
        let c = model_random_walk(&cfg, 3, 200, 6).unwrap();
        assert_ne!(a, c);
    }
}
