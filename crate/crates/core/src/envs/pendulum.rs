use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rotate, wrapped_angle, wrapped_angle_grad, EnvSpec, EnvState, Environment};

/// Torque-limited pendulum swing-up.
///
/// Observation `[cos th, sin th, th_dot]` with `th = 0` upright. The ODE is
/// `th_ddot = (g / l) sin th - b th_dot / (m l^2) + u / (m l^2)`, integrated
/// by semi-implicit Euler with the angular rate clipped to `max_speed`.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub max_speed: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            spec: EnvSpec {
                name: "pendulum".into(),
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-2.0],
                action_high: vec![2.0],
                horizon: 200,
                dt: 0.05,
            },
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            damping: 0.05,
            max_speed: 8.0,
        }
    }
}

impl Pendulum {
    /// Kinetic plus potential energy, zero at rest hanging down.
    pub fn mechanical_energy(&self, obs: &[f64]) -> f64 {
        let inertia = self.mass * self.length * self.length;
        0.5 * inertia * obs[2] * obs[2] + self.mass * self.gravity * self.length * (1.0 + obs[0])
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Hanging down with `th = pi + U(-0.2, 0.2)` and `th_dot = U(-0.1, 0.1)`.
    fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let th = PI + rng.random_range(-0.2..0.2);
        let w = rng.random_range(-0.1..0.1);
        EnvState {
            obs: vec![th.cos(), th.sin(), w],
            step: 0,
        }
    }

    fn transition(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let inertia = self.mass * self.length * self.length;
        let (c, s, w) = (obs[0], obs[1], obs[2]);
        let acc = self.gravity / self.length * s - self.damping * w / inertia + action[0] / inertia;
        let w = (w + self.spec.dt * acc).clamp(-self.max_speed, self.max_speed);
        let (c, s) = rotate(c, s, self.spec.dt * w);
        vec![c, s, w]
    }

    /// `-(th^2 + 0.1 th_dot^2 + 0.001 u^2)` with `th` wrapped.
    fn reward(&self, obs: &[f64], action: &[f64]) -> f64 {
        let th = wrapped_angle(obs[0], obs[1]);
        -(th * th + 0.1 * obs[2] * obs[2] + 0.001 * action[0] * action[0])
    }

    fn reward_grad(&self, obs: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let th = wrapped_angle(obs[0], obs[1]);
        let (dc, ds) = wrapped_angle_grad(obs[0], obs[1]);
        (
            vec![-2.0 * th * dc, -2.0 * th * ds, -0.2 * obs[2]],
            vec![-0.002 * action[0]],
        )
    }
}
