use std::sync::Arc;

use super::{cem_plan, gradient_plan, CandidateStreams, OptimizerKind, PlanResult, PlannerConfig, Problem, Regularizer};
use crate::dynamics::Dynamics;
use crate::envs::Environment;
use crate::error::{Error, Result};

/// Receding-horizon controller: plan, apply the first action, shift.
#[derive(Clone)]
pub struct MpcAgent {
    pub dynamics: Arc<dyn Dynamics>,
    pub regularizer: Arc<Regularizer>,
    pub env: Arc<dyn Environment>,
    pub config: PlannerConfig,
    /// Flat `(H + 1) x dim(a)` starting mean for the next plan.
    pub warm_start: Option<Vec<f64>>,
}

impl MpcAgent {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        regularizer: Arc<Regularizer>,
        env: Arc<dyn Environment>,
        config: PlannerConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.regularizer != regularizer.kind() {
            return Err(Error::config(format!(
                "planner expects a {:?} regularizer but got {:?}",
                config.regularizer,
                regularizer.kind()
            )));
        }
        Ok(Self {
            dynamics,
            regularizer,
            env,
            config,
            warm_start: None,
        })
    }

    pub fn reset(&mut self) {
        self.warm_start = None;
    }

    /// Plan from `s` at `timestep` and return the first action.
    pub fn act(&mut self, s: &[f64], timestep: u64) -> Result<(Vec<f64>, PlanResult)> {
        let (a, plan, next) = mpc_act(self, s, timestep)?;
        self.warm_start = next;
        Ok((a, plan))
    }
}

/// One MPC decision. Does not mutate the agent; the returned warm start is
/// the best sequence shifted left with the bounds midpoint appended, or
/// `None` when shifting is disabled.
pub fn mpc_act(agent: &MpcAgent, s: &[f64], timestep: u64) -> Result<(Vec<f64>, PlanResult, Option<Vec<f64>>)> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("MPC state"));
    }
    let cfg = &agent.config;
    let problem = Problem {
        dynamics: agent.dynamics.as_ref(),
        regularizer: agent.regularizer.as_ref(),
        env: agent.env.as_ref(),
        alpha: cfg.alpha,
        s0: s,
    };
    let warm = agent.warm_start.as_deref();
    let plan = match cfg.optimizer {
        OptimizerKind::Cem => cem_plan(&problem, cfg, warm, CandidateStreams::new(cfg.seed, timestep))?,
        OptimizerKind::Gradient => gradient_plan(&problem, cfg, warm)?,
    };
    let mut action = plan.actions[0].clone();
    cfg.clip(&mut action);
    let next = cfg.warm_start_shift.then(|| {
        let mut w: Vec<f64> = plan.actions[1..].iter().flatten().copied().collect();
        w.extend(cfg.midpoint());
        w
    });
    Ok((action, plan, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, true_dynamics_oracle};

    fn oracle_agent(name: &str, horizon: usize) -> MpcAgent {
        let env = make_env(name).unwrap();
        let mut cfg = PlannerConfig::for_env(env.spec());
        cfg.horizon = horizon;
        cfg.population = 100;
        cfg.elites = 10;
        MpcAgent::new(
            Arc::new(true_dynamics_oracle(env.clone())),
            Arc::new(Regularizer::None),
            env,
            cfg,
        )
        .unwrap()
    }

    #[test]
    fn zero_horizon_returns_the_best_single_action() {
        let agent = oracle_agent("pendulum", 0);
        let s = agent.env.reset(0).obs;
        let (a, plan, next) = mpc_act(&agent, &s, 0).unwrap();
        assert_eq!(a, plan.actions[0]);
        assert_eq!(next, Some(vec![0.0]));
    }

    #[test]
    fn repeated_calls_without_shift_are_identical() {
        let mut agent = oracle_agent("pendulum", 5);
        agent.config.warm_start_shift = false;
        let s = agent.env.reset(2).obs;
        let (a1, p1) = agent.act(&s, 7).unwrap();
        let (a2, p2) = agent.act(&s, 7).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn oracle_mpc_approaches_the_point_mass_goal() {
        let mut agent = oracle_agent("point_mass", 10);
        let env = agent.env.clone();
        let mut s = crate::envs::EnvState {
            obs: vec![2.0, -2.0, 0.0, 0.0],
            step: 0,
        };
        let mut dist = s.obs[0].hypot(s.obs[1]);
        for t in 0..10 {
            let (a, _) = agent.act(&s.obs, t).unwrap();
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            s = env.step(&s, &a).unwrap().state;
            let d = s.obs[0].hypot(s.obs[1]);
            assert!(d < dist, "step {t}: {d} >= {dist}");
            dist = d;
        }
    }

    #[test]
    fn regularizer_kind_must_match() {
        let env = make_env("pendulum").unwrap();
        let mut cfg = PlannerConfig::for_env(env.spec());
        cfg.regularizer = super::super::RegularizerKind::Deen;
        assert!(MpcAgent::new(
            Arc::new(true_dynamics_oracle(env.clone())),
            Arc::new(Regularizer::None),
            env,
            cfg
        )
        .is_err());
    }
}
