use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::Transition;
use super::derive_seed;
use crate::envs::Environment;
use crate::error::Result;
use crate::planner::MpcAgent;

pub enum Policy<'a> {
    /// Uniform over the action bounds.
    Random,
    Mpc(&'a mut MpcAgent),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub policy: String,
    #[serde(rename = "return")]
    pub return_: f64,
    pub buffer_size: usize,
    /// Mean per-step reward the chosen plan predicted, one entry per step.
    pub imagined_rewards: Vec<f64>,
    pub realized_rewards: Vec<f64>,
    pub wall_clock_s: f64,
    pub dyn_train_nll: Option<f64>,
    pub dyn_holdout_nll: Option<f64>,
    pub reg_train_loss: Option<f64>,
    /// Set when the episode stopped early on a numeric failure.
    pub aborted: Option<String>,
}

impl EpisodeRecord {
    pub fn mean_imagined_reward(&self) -> Option<f64> {
        mean(&self.imagined_rewards)
    }

    pub fn mean_realized_reward(&self) -> Option<f64> {
        mean(&self.realized_rewards)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Run one episode of `length` steps. Start state and exploration noise are
/// derived from `seed`; planner randomness comes from the agent's config
/// keyed by the step index.
pub fn run_episode(
    env: &dyn Environment,
    policy: Policy<'_>,
    seed: u64,
    episode: usize,
    length: usize,
) -> Result<(EpisodeRecord, Vec<Transition>)> {
    let start = Instant::now();
    let mut state = env.reset(derive_seed(seed, "reset", episode as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "explore", episode as u64));
    let spec = env.spec();
    let mut record = EpisodeRecord {
        episode,
        policy: match policy {
            Policy::Random => "random".into(),
            Policy::Mpc(_) => "mpc".into(),
        },
        ..EpisodeRecord::default()
    };
    let mut transitions = Vec::with_capacity(length);
    let mut agent = match policy {
        Policy::Mpc(a) => {
            a.reset();
            Some(a)
        }
        Policy::Random => None,
    };

    for step in 0..length {
        let action = match agent.as_deref_mut() {
            None => spec
                .action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect(),
            Some(agent) => match agent.act(&state.obs, step as u64) {
                Ok((a, plan)) => {
                    record.imagined_rewards.push(plan.imagined_reward / plan.actions.len() as f64);
                    a
                }
                Err(e) => {
                    record.aborted = Some(format!("planning at step {step}: {e}"));
                    break;
                }
            },
        };
        let outcome = match env.step(&state, &action) {
            Ok(o) => o,
            Err(e) => {
                record.aborted = Some(format!("environment step {step}: {e}"));
                break;
            }
        };
        let reward = env.reward(&state.obs, &outcome.action);
        record.realized_rewards.push(reward);
        transitions.push(Transition {
            s: state.obs.clone(),
            a: outcome.action,
            s_next: outcome.state.obs.clone(),
            reward,
            episode,
            step,
        });
        state = outcome.state;
    }
    record.return_ = transitions.iter().map(|t| t.reward).sum();
    record.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((record, transitions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_env;

    #[test]
    fn random_episode_has_exact_length_and_is_reproducible() {
        let env = make_env("pendulum").unwrap();
        let (r1, t1) = run_episode(env.as_ref(), Policy::Random, 3, 0, 200).unwrap();
        let (r2, t2) = run_episode(env.as_ref(), Policy::Random, 3, 0, 200).unwrap();
        assert_eq!(t1.len(), 200);
        assert_eq!(t1, t2);
        assert_eq!(r1.return_.to_bits(), r2.return_.to_bits());
        assert_eq!(r1.realized_rewards, r2.realized_rewards);
        assert_eq!(r1.return_, t1.iter().map(|t| t.reward).sum::<f64>());
        assert!(t1.iter().all(|t| t.a[0].abs() <= 2.0));
        assert!(r1.aborted.is_none());
    }
}
