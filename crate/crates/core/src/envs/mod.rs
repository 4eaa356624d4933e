//! Analytic continuous-control tasks with known reward functions.
//!
//! Every environment is a pure function of its observation vector: the
//! observation carries the full physical state, so [`Environment::transition`]
//! can be replayed by planners and by [`TrueDynamics`] with results that are
//! bitwise equal to stepping the environment.

mod cartpole;
mod pendulum;
mod point_mass;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::Dynamics;
use crate::error::{Error, Result};

pub use cartpole::CartpoleSwingUp;
pub use pendulum::Pendulum;
pub use point_mass::PointMass;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Episode length in steps.
    pub horizon: usize,
    pub dt: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::shape("action bounds do not match the action width"));
        }
        for (lo, hi) in self.action_low.iter().zip(&self.action_high) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!("invalid action bounds [{lo}, {hi}]")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::config("episode length must be >= 1"));
        }
        Ok(())
    }

    /// Clip `a` into the bounds; the flag is set when any entry moved.
    pub fn clip_action(&self, a: &[f64]) -> (Vec<f64>, bool) {
        let mut clipped = false;
        let out = a
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&v, (&lo, &hi))| {
                let c = v.clamp(lo, hi);
                clipped |= c != v;
                c
            })
            .collect();
        (out, clipped)
    }

    pub fn action_midpoint(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub obs: Vec<f64>,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    /// Action actually applied after clipping.
    pub action: Vec<f64>,
    pub clipped: bool,
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Initial state drawn from the environment's start distribution.
    fn reset(&self, seed: u64) -> EnvState;

    /// One integration step on an observation with an in-bounds action.
    fn transition(&self, obs: &[f64], action: &[f64]) -> Vec<f64>;

    fn reward(&self, obs: &[f64], action: &[f64]) -> f64;

    /// Gradients of [`Environment::reward`] with respect to the observation
    /// and the action.
    fn reward_grad(&self, obs: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>);

    /// Clip, integrate, and advance the step index.
    fn step(&self, state: &EnvState, action: &[f64]) -> Result<StepOutcome> {
        let spec = self.spec();
        if state.obs.len() != spec.state_dim || action.len() != spec.action_dim {
            return Err(Error::shape(format!(
                "{} expects state {} and action {}, got {} and {}",
                spec.name,
                spec.state_dim,
                spec.action_dim,
                state.obs.len(),
                action.len()
            )));
        }
        if action.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("action"));
        }
        let (action, clipped) = spec.clip_action(action);
        let obs = self.transition(&state.obs, &action);
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("{} state at step {}", spec.name, state.step + 1)));
        }
        Ok(StepOutcome {
            state: EnvState {
                obs,
                step: state.step + 1,
            },
            action,
            clipped,
        })
    }
}

pub const ENV_NAMES: [&str; 3] = ["pendulum", "cartpole_swingup", "point_mass"];

pub fn make_env(name: &str) -> Result<Arc<dyn Environment>> {
    match name {
        "pendulum" => Ok(Arc::new(Pendulum::default())),
        "cartpole_swingup" => Ok(Arc::new(CartpoleSwingUp::default())),
        "point_mass" => Ok(Arc::new(PointMass::default())),
        other => Err(Error::config(format!(
            "unknown environment {other:?}; expected one of {ENV_NAMES:?}"
        ))),
    }
}

/// Angle of a unit `(cos, sin)` pair in `(-pi, pi]`.
pub fn wrapped_angle(cos: f64, sin: f64) -> f64 {
    let t = sin.atan2(cos);
    if t == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        t
    }
}

/// Gradient of `wrapped_angle` with respect to `(cos, sin)`.
pub(crate) fn wrapped_angle_grad(cos: f64, sin: f64) -> (f64, f64) {
    let r2 = cos * cos + sin * sin;
    (-sin / r2, cos / r2)
}

/// Rotate a unit `(cos, sin)` pair by `delta` and renormalize.
pub(crate) fn rotate(cos: f64, sin: f64, delta: f64) -> (f64, f64) {
    let (sd, cd) = delta.sin_cos();
    let c = cos * cd - sin * sd;
    let s = sin * cd + cos * sd;
    let r = c.hypot(s);
    (c / r, s / r)
}

/// Exact dynamics of an environment exposed as a predictor with zero
/// variance. Actions are clipped as in [`Environment::step`].
#[derive(Clone)]
pub struct TrueDynamics {
    env: Arc<dyn Environment>,
}

impl TrueDynamics {
    pub fn new(env: Arc<dyn Environment>) -> Self {
        Self { env }
    }

    pub fn env(&self) -> &Arc<dyn Environment> {
        &self.env
    }
}

pub fn true_dynamics_oracle(env: Arc<dyn Environment>) -> TrueDynamics {
    TrueDynamics::new(env)
}

impl Dynamics for TrueDynamics {
    fn state_dim(&self) -> usize {
        self.env.spec().state_dim
    }

    fn action_dim(&self) -> usize {
        self.env.spec().action_dim
    }

    fn predict(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(s, a)?;
        let (a, _) = self.env.spec().clip_action(a);
        let next = self.env.transition(s, &a);
        Ok((next, vec![0.0; self.state_dim()]))
    }

    fn predict_rows(&self, states: &[f64], actions: &[f64]) -> Vec<f64> {
        let (ds, da) = (self.state_dim(), self.action_dim());
        let mut out = Vec::with_capacity(states.len());
        for (s, a) in states.chunks(ds).zip(actions.chunks(da)) {
            let (a, _) = self.env.spec().clip_action(a);
            out.extend(self.env.transition(s, &a));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unknown_names_are_rejected() {
        assert!(make_env("half_cheetah").is_err());
        for name in ENV_NAMES {
            let env = make_env(name).unwrap();
            assert_eq!(env.spec().name, name);
            env.spec().validate().unwrap();
        }
    }

    #[test]
    fn wrapping_is_half_open() {
        assert_eq!(wrapped_angle(-1.0, -0.0), PI);
        assert_eq!(wrapped_angle(-1.0, 0.0), PI);
        assert_eq!(wrapped_angle(1.0, 0.0), 0.0);
    }

    #[test]
    fn clipping_is_flagged() {
        let env = make_env("pendulum").unwrap();
        let s = env.reset(0);
        let out = env.step(&s, &[5.0]).unwrap();
        assert!(out.clipped);
        assert_eq!(out.action, vec![2.0]);
        let inside = env.step(&s, &[1.0]).unwrap();
        assert!(!inside.clipped);
        assert_eq!(env.step(&s, &[2.0]).unwrap().state, out.state);
        assert!(env.step(&s, &[f64::NAN]).is_err());
        assert!(env.step(&s, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn oracle_matches_stepping_bitwise() {
        for name in ENV_NAMES {
            let env = make_env(name).unwrap();
            let oracle = true_dynamics_oracle(env.clone());
            let mut s = env.reset(3);
            let actions: Vec<Vec<f64>> = (0..20)
                .map(|k| {
                    env.spec()
                        .action_high
                        .iter()
                        .map(|h| h * ((k as f64) * 0.7).sin())
                        .collect()
                })
                .collect();
            let predicted = oracle.rollout(&s.obs, &actions).unwrap();
            for (a, p) in actions.iter().zip(&predicted) {
                s = env.step(&s, a).unwrap().state;
                assert_eq!(&s.obs, p);
            }
            let (_, var) = oracle.predict(&s.obs, &actions[0]).unwrap();
            assert!(var.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn reward_gradients_match_finite_differences() {
        for name in ENV_NAMES {
            let env = make_env(name).unwrap();
            let mut s = env.reset(11);
            for _ in 0..7 {
                let a = env.spec().action_midpoint();
                let a: Vec<f64> = a.iter().zip(&env.spec().action_high).map(|(m, h)| m + 0.3 * h).collect();
                s = env.step(&s, &a).unwrap().state;
            }
            let a: Vec<f64> = env.spec().action_high.iter().map(|h| 0.4 * h).collect();
            let (gs, ga) = env.reward_grad(&s.obs, &a);
            let h = 1e-6;
            for i in 0..s.obs.len() {
                let (mut p, mut m) = (s.obs.clone(), s.obs.clone());
                p[i] += h;
                m[i] -= h;
                let fd = (env.reward(&p, &a) - env.reward(&m, &a)) / (2.0 * h);
                assert!((fd - gs[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{name} state {i}: {fd} vs {}", gs[i]);
            }
            for i in 0..a.len() {
                let (mut p, mut m) = (a.clone(), a.clone());
                p[i] += h;
                m[i] -= h;
                let fd = (env.reward(&s.obs, &p) - env.reward(&s.obs, &m)) / (2.0 * h);
                assert!((fd - ga[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{name} action {i}");
            }
        }
    }

    #[test]
    fn episodes_reproduce_bitwise() {
        for name in ENV_NAMES {
            let env = make_env(name).unwrap();
            let run = || {
                let mut s = env.reset(5);
                let mut trace = vec![s.obs.clone()];
                for k in 0..env.spec().horizon {
                    let a: Vec<f64> = env.spec().action_high.iter().map(|h| h * (k as f64 * 0.37).cos()).collect();
                    s = env.step(&s, &a).unwrap().state;
                    trace.push(s.obs.clone());
                }
                (trace, s.step)
            };
            let (a, n) = run();
            assert_eq!(a, run().0);
            assert_eq!(n, env.spec().horizon);
        }
    }
}
