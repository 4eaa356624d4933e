use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rotate, wrapped_angle, wrapped_angle_grad, EnvSpec, EnvState, Environment};

/// Cart-pole swing-up on an unbounded track.
///
/// Observation `[x, cos th, sin th, x_dot, th_dot]` with `th = 0` upright.
/// Uses the classic frictionless cart-pole equations with `half_length` the
/// distance from pivot to the pole's center of mass.
#[derive(Clone, Debug)]
pub struct CartpoleSwingUp {
    spec: EnvSpec,
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
}

impl Default for CartpoleSwingUp {
    fn default() -> Self {
        Self {
            spec: EnvSpec {
                name: "cartpole_swingup".into(),
                state_dim: 5,
                action_dim: 1,
                action_low: vec![-10.0],
                action_high: vec![10.0],
                horizon: 200,
                dt: 0.05,
            },
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
        }
    }
}

impl Environment for CartpoleSwingUp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Pole hanging at `th = pi + U(-0.1, 0.1)`, cart at `x = U(-0.1, 0.1)`,
    /// both at rest.
    fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let th = PI + rng.random_range(-0.1..0.1);
        let x = rng.random_range(-0.1..0.1);
        EnvState {
            obs: vec![x, th.cos(), th.sin(), 0.0, 0.0],
            step: 0,
        }
    }

    fn transition(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let (x, c, s, xd, wd) = (obs[0], obs[1], obs[2], obs[3], obs[4]);
        let total = self.cart_mass + self.pole_mass;
        let ml = self.pole_mass * self.half_length;
        let temp = (action[0] + ml * wd * wd * s) / total;
        let th_acc = (self.gravity * s - c * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * c * c / total));
        let x_acc = temp - ml * th_acc * c / total;
        let dt = self.spec.dt;
        let xd = xd + dt * x_acc;
        let wd = wd + dt * th_acc;
        let (c, s) = rotate(c, s, dt * wd);
        vec![x + dt * xd, c, s, xd, wd]
    }

    /// `-(th^2 + 0.1 x^2 + 0.01 x_dot^2 + 0.01 th_dot^2 + 0.001 u^2)`.
    fn reward(&self, obs: &[f64], action: &[f64]) -> f64 {
        let th = wrapped_angle(obs[1], obs[2]);
        -(th * th
            + 0.1 * obs[0] * obs[0]
            + 0.01 * obs[3] * obs[3]
            + 0.01 * obs[4] * obs[4]
            + 0.001 * action[0] * action[0])
    }

    fn reward_grad(&self, obs: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let th = wrapped_angle(obs[1], obs[2]);
        let (dc, ds) = wrapped_angle_grad(obs[1], obs[2]);
        (
            vec![
                -0.2 * obs[0],
                -2.0 * th * dc,
                -2.0 * th * ds,
                -0.02 * obs[3],
                -0.02 * obs[4],
            ],
            vec![-0.002 * action[0]],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_hanging_down_with_jitter() {
        let env = CartpoleSwingUp::default();
        let s = env.reset(4);
        assert_eq!(s, env.reset(4));
        let th = wrapped_angle(s.obs[1], s.obs[2]);
        assert!((th.abs() - PI).abs() <= 0.1);
        assert_eq!(&s.obs[3..], &[0.0, 0.0]);
    }

    #[test]
    fn hanging_rest_is_a_fixed_point() {
        let env = CartpoleSwingUp::default();
        let mut s = EnvState {
            obs: vec![0.0, -1.0, 0.0, 0.0, 0.0],
            step: 0,
        };
        for _ in 0..100 {
            s = env.step(&s, &[0.0]).unwrap().state;
        }
        assert_eq!(s.obs, vec![0.0, -1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pushing_moves_the_cart_and_swings_the_pole_back() {
        let env = CartpoleSwingUp::default();
        let s = EnvState {
            obs: vec![0.0, -1.0, 0.0, 0.0, 0.0],
            step: 0,
        };
        let next = env.step(&s, &[10.0]).unwrap().state;
        assert!(next.obs[3] > 0.0);
        // Hanging pole lags behind the cart.
        assert!(next.obs[4] > 0.0);
    }

    #[test]
    fn upright_at_rest_is_the_reward_maximum() {
        let env = CartpoleSwingUp::default();
        assert_eq!(env.reward(&[0.0, 1.0, 0.0, 0.0, 0.0], &[0.0]), 0.0);
        assert_eq!(env.reward(&[0.0, -1.0, 0.0, 0.0, 0.0], &[0.0]), -PI * PI);
    }
}
