use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, EnvState, Environment};

/// Frictionless planar point mass driven to the origin.
///
/// State `[px, py, vx, vy]`, action is a force in `[-1, 1]^2`.
#[derive(Clone, Debug)]
pub struct PointMass {
    spec: EnvSpec,
    pub mass: f64,
    /// Half-width of the square the start position is drawn from.
    pub start_box: f64,
}

impl Default for PointMass {
    fn default() -> Self {
        Self {
            spec: EnvSpec {
                name: "point_mass".into(),
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-1.0, -1.0],
                action_high: vec![1.0, 1.0],
                horizon: 100,
                dt: 0.1,
            },
            mass: 1.0,
            start_box: 2.0,
        }
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Position uniform in `[-start_box, start_box]^2`, velocity zero.
    fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = self.start_box;
        let px = rng.random_range(-b..=b);
        let py = rng.random_range(-b..=b);
        EnvState {
            obs: vec![px, py, 0.0, 0.0],
            step: 0,
        }
    }

    fn transition(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let dt = self.spec.dt;
        let vx = obs[2] + dt * action[0] / self.mass;
        let vy = obs[3] + dt * action[1] / self.mass;
        vec![obs[0] + dt * vx, obs[1] + dt * vy, vx, vy]
    }

    /// `-(|p|^2 + 0.1 |v|^2 + 0.01 |u|^2)`.
    fn reward(&self, obs: &[f64], action: &[f64]) -> f64 {
        let p = obs[0] * obs[0] + obs[1] * obs[1];
        let v = obs[2] * obs[2] + obs[3] * obs[3];
        let u = action[0] * action[0] + action[1] * action[1];
        -(p + 0.1 * v + 0.01 * u)
    }

    fn reward_grad(&self, obs: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            vec![-2.0 * obs[0], -2.0 * obs[1], -0.2 * obs[2], -0.2 * obs[3]],
            vec![-0.02 * action[0], -0.02 * action[1]],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_draws_inside_the_box_at_rest() {
        let env = PointMass::default();
        for seed in 0..50 {
            let s = env.reset(seed);
            assert!(s.obs[..2].iter().all(|p| p.abs() <= 2.0));
            assert_eq!(&s.obs[2..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn constant_force_matches_closed_form_kinematics() {
        let env = PointMass::default();
        let h = env.spec.dt;
        let a = [1.0, -0.5];
        let p0 = [0.3, -1.2];
        let mut s = EnvState {
            obs: vec![p0[0], p0[1], 0.0, 0.0],
            step: 0,
        };
        for k in 1..=40 {
            s = env.step(&s, &a).unwrap().state;
            let kf = k as f64;
            for d in 0..2 {
                // Semi-implicit Euler: v_k = k h a, p_k = p0 + h^2 a k (k + 1) / 2.
                let p = p0[d] + h * h * a[d] * kf * (kf + 1.0) / 2.0;
                assert!((s.obs[d] - p).abs() <= 1e-9, "step {k}");
                assert!((s.obs[2 + d] - kf * h * a[d]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn goal_at_rest_scores_zero() {
        let env = PointMass::default();
        assert_eq!(env.reward(&[0.0; 4], &[0.0, 0.0]), 0.0);
        assert!(env.reward(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0]) < 0.0);
    }
}
