use serde::{Deserialize, Serialize};

use super::{unflatten, PlanResult, PlannerConfig, Problem};
use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientPlannerConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for GradientPlannerConfig {
    fn default() -> Self {
        Self { steps: 50, lr: 0.05 }
    }
}

/// Gradient of the planning objective with respect to the flat action
/// sequence, through the learned model's mean rollout.
///
/// The tape holds the rollout only; rewards and penalties enter through the
/// linear surrogate `sum <dJ/ds_tau, s_tau> + <dJ/da_tau, a_tau>` whose
/// coefficients are evaluated outside the tape.
pub(crate) fn objective_gradient(problem: &Problem<'_>, seq: &[f64], steps: usize) -> Result<Vec<f64>> {
    let model = problem
        .dynamics
        .as_learned()
        .ok_or_else(|| Error::config("the gradient planner needs a learned dynamics model"))?;
    let (ds, da) = (model.state_dim, model.action_dim);
    let mut tape = Tape::new();
    let net = model.params.on_tape(&mut tape);
    let mut states = vec![tape.leaf(Tensor::matrix(1, ds, problem.s0.to_vec())?)];
    let mut actions = Vec::with_capacity(steps);
    for tau in 0..steps {
        let a = tape.leaf(Tensor::matrix(1, da, seq[tau * da..(tau + 1) * da].to_vec())?);
        let next = model.taped_step(&mut tape, &net, states[tau], a)?;
        actions.push(a);
        states.push(next);
    }

    let values: Vec<Vec<f64>> = states.iter().map(|v| tape.value(*v).data().to_vec()).collect();
    let mut gs = vec![vec![0.0; ds]; steps + 1];
    let mut ga = vec![vec![0.0; da]; steps];
    for tau in 0..steps {
        let a = &seq[tau * da..(tau + 1) * da];
        let (rs, ra) = problem.env.reward_grad(&values[tau], a);
        gs[tau] = rs;
        ga[tau] = ra;
    }
    if problem.weighted() {
        let width = 2 * ds + da;
        let mut rows = Vec::with_capacity(steps * width);
        for tau in 0..steps {
            rows.extend_from_slice(&values[tau]);
            rows.extend_from_slice(&seq[tau * da..(tau + 1) * da]);
            rows.extend_from_slice(&values[tau + 1]);
        }
        let pg = problem.regularizer.penalty_gradient_rows(&rows)?;
        for (tau, g) in pg.chunks(width).enumerate() {
            for i in 0..ds {
                gs[tau][i] -= problem.alpha * g[i];
                gs[tau + 1][i] -= problem.alpha * g[ds + da + i];
            }
            for i in 0..da {
                ga[tau][i] -= problem.alpha * g[ds + i];
            }
        }
    }

    // The start state is a constant, so its coefficient is dropped.
    let mut total = None;
    for (tau, v) in states.iter().enumerate().skip(1) {
        let c = tape.leaf(Tensor::matrix(1, ds, gs[tau].clone())?);
        let prod = tape.mul(c, *v)?;
        let term = tape.sum(prod);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let mut grad = tape.gradients(total.expect("at least one step"), &actions)?;
    let mut out = Vec::with_capacity(steps * da);
    for (tau, g) in grad.iter_mut().enumerate() {
        for (x, direct) in g.data_mut().iter_mut().zip(&ga[tau]) {
            *x += direct;
        }
        out.extend_from_slice(g.data());
    }
    Ok(out)
}

/// Adam ascent on the action sequence, clipped to bounds after every step.
/// Returns the best sequence evaluated.
pub fn gradient_plan(problem: &Problem<'_>, config: &PlannerConfig, warm_start: Option<&[f64]>) -> Result<PlanResult> {
    config.validate()?;
    problem.validate(config.action_dim())?;
    let steps = config.steps();
    let da = config.action_dim();
    let mut seq = match warm_start {
        Some(w) if w.len() == steps * da => w.to_vec(),
        Some(_) => return Err(Error::shape("warm start has the wrong length")),
        None => config.default_mean(),
    };
    config.clip(&mut seq);
    let mut adam = AdamState::new(seq.len(), AdamConfig::with_lr(config.gradient.lr))?;
    let mut trace = Vec::with_capacity(config.gradient.steps + 1);
    let mut best: Option<(Vec<f64>, super::Evaluation)> = None;

    for k in 0..=config.gradient.steps {
        let e = problem.evaluate_batch(&seq, steps, true)[0];
        trace.push(e.value);
        if best.as_ref().is_none_or(|(_, b)| e.value > b.value) && e.value > f64::NEG_INFINITY {
            best = Some((seq.clone(), e));
        }
        if k == config.gradient.steps || !e.value.is_finite() {
            break;
        }
        let g = match objective_gradient(problem, &seq, steps) {
            Ok(g) => g,
            Err(Error::NonFinite(_)) => break,
            Err(e) => return Err(e),
        };
        let descent: Vec<f64> = g.iter().map(|v| -v).collect();
        adam.step(&mut seq, &descent)?;
        config.clip(&mut seq);
    }
    Ok(match best {
        Some((s, e)) => PlanResult {
            actions: unflatten(&s, da),
            objective: e.value,
            elite_trace: trace,
            imagined_reward: e.reward,
            imagined_penalty: e.penalty,
            all_invalid: false,
        },
        None => PlanResult {
            actions: unflatten(&seq, da),
            objective: f64::NEG_INFINITY,
            elite_trace: trace,
            imagined_reward: f64::NAN,
            imagined_penalty: f64::NAN,
            all_invalid: true,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{DenoiserModel, EnergyModel};
    use crate::dynamics::DynamicsModel;
    use crate::envs::{make_env, Environment};
    use crate::nn::{Activation, NetworkParams};
    use crate::normalize::Normalizer;
    use crate::planner::Regularizer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> DynamicsModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = NetworkParams::init(&[3, 8, 4], Activation::Softplus, &mut rng);
        let mut out = Normalizer::identity(2);
        out.std = vec![0.3, 0.5];
        out.mean = vec![0.1, -0.2];
        let mut inp = Normalizer::identity(3);
        inp.std = vec![2.0, 1.5, 0.7];
        DynamicsModel::new(p, inp, out, 2, 1).unwrap()
    }

    /// Small environment with a smooth reward for gradient checks.
    struct Quad(crate::envs::EnvSpec);
    impl crate::envs::Environment for Quad {
        fn spec(&self) -> &crate::envs::EnvSpec {
            &self.0
        }
        fn reset(&self, _: u64) -> crate::envs::EnvState {
            crate::envs::EnvState {
                obs: vec![0.0, 0.0],
                step: 0,
            }
        }
        fn transition(&self, o: &[f64], _: &[f64]) -> Vec<f64> {
            o.to_vec()
        }
        fn reward(&self, o: &[f64], a: &[f64]) -> f64 {
            -(o[0] - 1.0).powi(2) - 0.5 * o[1] * o[1] - 0.1 * a[0] * a[0] + 0.3 * o[0] * a[0]
        }
        fn reward_grad(&self, o: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (
                vec![-2.0 * (o[0] - 1.0) + 0.3 * a[0], -o[1]],
                vec![-0.2 * a[0] + 0.3 * o[0]],
            )
        }
    }

    fn quad_env() -> Quad {
        let mut spec = make_env("pendulum").unwrap().spec().clone();
        spec.state_dim = 2;
        Quad(spec)
    }

    fn check_fd(reg: &Regularizer, alpha: f64, stop_grad: bool) {
        let dyn_model = model(1);
        let env = quad_env();
        let s0 = [0.4, -0.3];
        let p = Problem {
            dynamics: &dyn_model,
            regularizer: reg,
            env: &env,
            alpha,
            s0: &s0,
        };
        let seq = vec![0.3, -0.5, 0.8, 0.1];
        let g = objective_gradient(&p, &seq, 4).unwrap();
        let h = 1e-6;
        for i in 0..seq.len() {
            let (mut a, mut b) = (seq.clone(), seq.clone());
            a[i] += h;
            b[i] -= h;
            let fa = p.evaluate_batch(&a, 4, true)[0].value;
            let fb = p.evaluate_batch(&b, 4, true)[0].value;
            let fd = (fa - fb) / (2.0 * h);
            if !stop_grad {
                assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "entry {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_without_regularizer() {
        check_fd(&Regularizer::None, 0.0, false);
    }

    #[test]
    fn gradient_matches_finite_differences_with_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = NetworkParams::init(&[5, 6, 1], Activation::Softplus, &mut rng);
        let mut n = Normalizer::identity(5);
        n.std = vec![1.0, 2.0, 0.5, 1.0, 3.0];
        let reg = Regularizer::Deen(EnergyModel::new(p, n, 0.5).unwrap());
        check_fd(&reg, 0.7, false);
    }

    #[test]
    fn denoiser_penalty_gradient_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = NetworkParams::init(&[5, 6, 5], Activation::Softplus, &mut rng);
        let reg = Regularizer::Dae(DenoiserModel::new(p, Normalizer::identity(5), 0.5).unwrap());
        check_fd(&reg, 0.7, true);
    }

    #[test]
    fn ascent_does_not_lose_the_starting_value() {
        let dyn_model = model(2);
        let env = quad_env();
        let s0 = [0.0, 0.0];
        let reg = Regularizer::None;
        let p = Problem {
            dynamics: &dyn_model,
            regularizer: &reg,
            env: &env,
            alpha: 0.0,
            s0: &s0,
        };
        let mut cfg = PlannerConfig::for_env(env.spec());
        cfg.horizon = 3;
        let start = p.evaluate_batch(&cfg.default_mean(), 4, true)[0].value;
        let r = gradient_plan(&p, &cfg, None).unwrap();
        assert!(r.objective >= start);
        assert!(r.objective > start, "no progress from {start}");
        assert!(r.actions.iter().flatten().all(|a| (-2.0..=2.0).contains(a)));
    }
}
