//! Finite-horizon action-sequence optimization over a dynamics model.
//!
//! The objective of a candidate `a_t..a_{t+H}` from the real state `s_t` is
//! the imagined reward sum minus `alpha` times the regularizer penalty of
//! every imagined transition `(s_tau, a_tau, s_tau+1)`.

mod cem;
mod gradient;
mod mpc;

use serde::{Deserialize, Serialize};

use crate::density::{DenoiserModel, EnergyModel};
use crate::dynamics::Dynamics;
use crate::envs::{EnvSpec, Environment};
use crate::error::{Error, Result};

pub use cem::{cem_plan, cem_plan_with, CandidateStreams};
pub use gradient::{gradient_plan, GradientPlannerConfig};
pub use mpc::{mpc_act, MpcAgent};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    #[default]
    None,
    Deen,
    Dae,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Cem,
    Gradient,
}

/// Trained penalty on transition vectors `(s, a, s')`.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Regularizer {
    #[default]
    None,
    Deen(EnergyModel),
    Dae(DenoiserModel),
}

impl Regularizer {
    pub fn kind(&self) -> RegularizerKind {
        match self {
            Regularizer::None => RegularizerKind::None,
            Regularizer::Deen(_) => RegularizerKind::Deen,
            Regularizer::Dae(_) => RegularizerKind::Dae,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Regularizer::None => None,
            Regularizer::Deen(m) => Some(m.dim()),
            Regularizer::Dae(m) => Some(m.dim()),
        }
    }

    /// Penalty per row of a flat transition buffer; zeros when absent.
    pub fn penalty_rows(&self, rows: &[f64], width: usize) -> Vec<f64> {
        match self {
            Regularizer::None => vec![0.0; rows.len() / width],
            Regularizer::Deen(m) => m.energy_rows(rows),
            Regularizer::Dae(m) => m.penalty_rows(rows),
        }
    }

    /// Penalty gradients per row. The denoiser form holds the denoiser
    /// output fixed.
    pub fn penalty_gradient_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        match self {
            Regularizer::None => Ok(vec![0.0; rows.len()]),
            Regularizer::Deen(m) => m.energy_gradient_rows(rows),
            Regularizer::Dae(m) => Ok(m.penalty_gradient_rows(rows)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Number of future steps after the first; sequences have `H + 1` actions.
    pub horizon: usize,
    pub alpha: f64,
    pub regularizer: RegularizerKind,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    /// Initial sampling std per action dimension; `(high - low) / 4` if absent.
    pub init_std: Option<Vec<f64>>,
    pub std_floor: f64,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub warm_start_shift: bool,
    pub seed: u64,
    pub parallel: bool,
    pub optimizer: OptimizerKind,
    pub gradient: GradientPlannerConfig,
}

impl PlannerConfig {
    /// Defaults for the bounds of `spec`.
    pub fn for_env(spec: &EnvSpec) -> Self {
        Self {
            horizon: 20,
            alpha: 0.0,
            regularizer: RegularizerKind::None,
            population: 400,
            elites: 40,
            iterations: 5,
            init_std: None,
            std_floor: 1e-3,
            action_low: spec.action_low.clone(),
            action_high: spec.action_high.clone(),
            warm_start_shift: true,
            seed: 0,
            parallel: true,
            optimizer: OptimizerKind::Cem,
            gradient: GradientPlannerConfig::default(),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    pub fn steps(&self) -> usize {
        self.horizon + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 1 || self.elites < 1 || self.elites > self.population {
            return Err(Error::config(format!(
                "need 1 <= elites <= population, got elites {} and population {}",
                self.elites, self.population
            )));
        }
        if self.iterations < 1 {
            return Err(Error::config("CEM needs at least one iteration"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha must be finite and >= 0"));
        }
        if !(self.std_floor > 0.0) {
            return Err(Error::config("std floor must be > 0"));
        }
        if self.action_low.is_empty() || self.action_low.len() != self.action_high.len() {
            return Err(Error::config("action bounds must be non-empty and equal length"));
        }
        for (lo, hi) in self.action_low.iter().zip(&self.action_high) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!("invalid action bounds [{lo}, {hi}]")));
            }
        }
        if let Some(std) = &self.init_std {
            if std.len() != self.action_dim() || std.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::config("init_std must be positive per action dimension"));
            }
        }
        Ok(())
    }

    /// Per-dimension initial std.
    pub fn initial_std(&self) -> Vec<f64> {
        match &self.init_std {
            Some(s) => s.clone(),
            None => self
                .action_low
                .iter()
                .zip(&self.action_high)
                .map(|(lo, hi)| (hi - lo) / 4.0)
                .collect(),
        }
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// Flat `(H + 1) x dim(a)` sequence of midpoints.
    pub fn default_mean(&self) -> Vec<f64> {
        let mid = self.midpoint();
        let mut out = Vec::with_capacity(self.steps() * mid.len());
        for _ in 0..self.steps() {
            out.extend_from_slice(&mid);
        }
        out
    }

    pub(crate) fn clip(&self, seq: &mut [f64]) {
        let d = self.action_dim();
        for row in seq.chunks_mut(d) {
            for ((v, lo), hi) in row.iter_mut().zip(&self.action_low).zip(&self.action_high) {
                *v = v.clamp(*lo, *hi);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    /// Best sequence, `H + 1` rows of `dim(a)`.
    pub actions: Vec<Vec<f64>>,
    pub objective: f64,
    /// Mean elite objective per CEM iteration (objective per step for the
    /// gradient planner).
    pub elite_trace: Vec<f64>,
    pub imagined_reward: f64,
    /// Unweighted penalty sum of the best sequence.
    pub imagined_penalty: f64,
    /// Set when no candidate had a finite objective; `actions` is then the
    /// starting mean.
    pub all_invalid: bool,
}

/// Value of one candidate: total, reward sum, penalty sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub reward: f64,
    pub penalty: f64,
}

/// Everything the objective needs except the candidate actions.
pub struct Problem<'a> {
    pub dynamics: &'a dyn Dynamics,
    pub regularizer: &'a Regularizer,
    pub env: &'a dyn Environment,
    pub alpha: f64,
    pub s0: &'a [f64],
}

impl Problem<'_> {
    fn weighted(&self) -> bool {
        self.alpha != 0.0 && !matches!(self.regularizer, Regularizer::None)
    }

    pub fn validate(&self, action_dim: usize) -> Result<()> {
        if self.s0.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("planning start state"));
        }
        if self.s0.len() != self.dynamics.state_dim() || action_dim != self.dynamics.action_dim() {
            return Err(Error::shape("planner widths do not match the dynamics model"));
        }
        let spec = self.env.spec();
        if spec.state_dim != self.dynamics.state_dim() || spec.action_dim != action_dim {
            return Err(Error::shape("planner widths do not match the environment"));
        }
        if let Some(d) = self.regularizer.dim() {
            if d != 2 * spec.state_dim + spec.action_dim {
                return Err(Error::shape(format!(
                    "regularizer width {d} does not match transition width {}",
                    2 * spec.state_dim + spec.action_dim
                )));
            }
        }
        Ok(())
    }

    /// Evaluate `n` candidates stored as flat `n x steps x dim(a)`.
    /// `with_penalty` forces the penalty to be computed even when it does not
    /// enter the value.
    pub fn evaluate_batch(&self, candidates: &[f64], steps: usize, with_penalty: bool) -> Vec<Evaluation> {
        let ds = self.dynamics.state_dim();
        let da = self.dynamics.action_dim();
        let n = candidates.len() / (steps * da);
        let weighted = self.weighted();
        let penalize = weighted || (with_penalty && !matches!(self.regularizer, Regularizer::None));
        let width = 2 * ds + da;

        let mut states = Vec::with_capacity(n * ds);
        for _ in 0..n {
            states.extend_from_slice(self.s0);
        }
        let mut rewards = vec![0.0; n];
        let mut penalties = vec![0.0; n];
        let mut actions = vec![0.0; n * da];
        let mut transitions = if penalize { vec![0.0; n * width] } else { Vec::new() };
        for tau in 0..steps {
            for c in 0..n {
                let src = &candidates[(c * steps + tau) * da..(c * steps + tau + 1) * da];
                actions[c * da..(c + 1) * da].copy_from_slice(src);
            }
            for c in 0..n {
                rewards[c] += self
                    .env
                    .reward(&states[c * ds..(c + 1) * ds], &actions[c * da..(c + 1) * da]);
            }
            let next = self.dynamics.predict_rows(&states, &actions);
            if penalize {
                for c in 0..n {
                    let row = &mut transitions[c * width..(c + 1) * width];
                    row[..ds].copy_from_slice(&states[c * ds..(c + 1) * ds]);
                    row[ds..ds + da].copy_from_slice(&actions[c * da..(c + 1) * da]);
                    row[ds + da..].copy_from_slice(&next[c * ds..(c + 1) * ds]);
                }
                let p = self.regularizer.penalty_rows(&transitions, width);
                for (acc, v) in penalties.iter_mut().zip(p) {
                    *acc += v;
                }
            }
            states = next;
        }
        rewards
            .into_iter()
            .zip(penalties)
            .map(|(reward, penalty)| {
                let value = if weighted {
                    reward - self.alpha * penalty
                } else {
                    reward
                };
                Evaluation {
                    value: if value.is_finite() { value } else { f64::NEG_INFINITY },
                    reward,
                    penalty,
                }
            })
            .collect()
    }
}

/// Objective of one action sequence: `(value, imagined reward, penalty)`.
/// A non-finite rollout yields a value of negative infinity.
pub fn objective(problem: &Problem<'_>, actions: &[Vec<f64>]) -> Result<(f64, f64, f64)> {
    if actions.is_empty() {
        return Err(Error::contract("objective needs at least one action"));
    }
    let da = actions[0].len();
    problem.validate(da)?;
    if actions.iter().any(|a| a.len() != da) {
        return Err(Error::shape("ragged action sequence"));
    }
    let flat: Vec<f64> = actions.iter().flatten().copied().collect();
    let e = problem.evaluate_batch(&flat, actions.len(), true)[0];
    Ok((e.value, e.reward, e.penalty))
}

pub(crate) fn unflatten(seq: &[f64], da: usize) -> Vec<Vec<f64>> {
    seq.chunks(da).map(<[f64]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, true_dynamics_oracle};

    #[test]
    fn config_validation() {
        let env = make_env("pendulum").unwrap();
        let mut cfg = PlannerConfig::for_env(env.spec());
        cfg.validate().unwrap();
        cfg.elites = cfg.population + 1;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = PlannerConfig::for_env(env.spec());
        cfg.alpha = -1.0;
        assert!(cfg.validate().is_err());
        assert_eq!(cfg.initial_std(), vec![1.0]);
    }

    #[test]
    fn zero_horizon_is_a_single_step() {
        let env = make_env("pendulum").unwrap();
        let oracle = true_dynamics_oracle(env.clone());
        let s0 = env.reset(0).obs;
        let reg = Regularizer::None;
        let p = Problem {
            dynamics: &oracle,
            regularizer: &reg,
            env: env.as_ref(),
            alpha: 0.0,
            s0: &s0,
        };
        let (v, r, pen) = objective(&p, &[vec![0.5]]).unwrap();
        assert_eq!(v, env.reward(&s0, &[0.5]));
        assert_eq!(r, v);
        assert_eq!(pen, 0.0);
    }

    #[test]
    fn non_finite_rollouts_become_negative_infinity() {
        let env = make_env("point_mass").unwrap();
        let oracle = true_dynamics_oracle(env.clone());
        let s0 = vec![1e200, 0.0, 1e200, 0.0];
        let reg = Regularizer::None;
        let p = Problem {
            dynamics: &oracle,
            regularizer: &reg,
            env: env.as_ref(),
            alpha: 0.0,
            s0: &s0,
        };
        let (v, _, _) = objective(&p, &vec![vec![0.0, 0.0]; 3]).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
    }
}
