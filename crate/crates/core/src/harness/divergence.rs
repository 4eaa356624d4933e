use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PlannerModel};
use super::derive_seed;
use super::training::Trainer;
use crate::error::{Error, Result};
use crate::planner::{cem_plan, CandidateStreams, Problem, RegularizerKind};

pub const DIVERGENCE_KINDS: [RegularizerKind; 3] = [RegularizerKind::None, RegularizerKind::Dae, RegularizerKind::Deen];

/// One open-loop plan executed in the real environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub seed: u64,
    pub regularizer: RegularizerKind,
    pub alpha: f64,
    /// Reward sum the model predicted for the plan.
    pub imagined: f64,
    /// Reward sum obtained by executing the plan.
    pub realized: f64,
    /// `|imagined - realized|`
    pub gap: f64,
    pub imagined_rewards: Vec<f64>,
    pub realized_rewards: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub rows: Vec<DivergenceRow>,
}

impl DivergenceReport {
    pub fn rows_for(&self, kind: RegularizerKind) -> impl Iterator<Item = &DivergenceRow> {
        self.rows.iter().filter(move |r| r.regularizer == kind)
    }

    pub fn mean_gap(&self, kind: RegularizerKind) -> f64 {
        mean(self.rows_for(kind).map(|r| r.gap))
    }

    pub fn mean_realized(&self, kind: RegularizerKind) -> f64 {
        mean(self.rows_for(kind).map(|r| r.realized))
    }

    /// Row for `(seed, kind)`.
    pub fn row(&self, seed: u64, kind: RegularizerKind) -> Option<&DivergenceRow> {
        self.rows.iter().find(|r| r.seed == seed && r.regularizer == kind)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(["seed", "regularizer", "alpha", "imagined", "realized", "gap"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.rows {
            let kind = serde_json::to_value(r.regularizer).map_err(|e| Error::Format(e.to_string()))?;
            w.write_record([
                r.seed.to_string(),
                kind.as_str().unwrap_or_default().to_owned(),
                r.alpha.to_string(),
                r.imagined.to_string(),
                r.realized.to_string(),
                r.gap.to_string(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n.max(1) as f64
}

/// Energy weight used for `kind` in the open-loop comparison.
pub fn divergence_alpha(cfg: &ExperimentConfig, kind: RegularizerKind) -> f64 {
    match kind {
        RegularizerKind::None => 0.0,
        RegularizerKind::Dae => cfg.divergence.dae_alpha,
        RegularizerKind::Deen => cfg.divergence.deen_alpha.unwrap_or(cfg.regularizer.cost_multiplier),
    }
}

/// Train for `episodes` episodes, act `settle_steps` more steps with the
/// training-time MPC controller, then plan open loop from the reached state
/// once per regularizer and execute each plan in the real environment.
/// Seeds run are `cfg.seed .. cfg.seed + seeds`.
pub fn divergence_experiment(
    cfg: &ExperimentConfig,
    episodes: usize,
    settle_steps: usize,
    seeds: usize,
) -> Result<DivergenceReport> {
    if episodes == 0 || seeds == 0 {
        return Err(Error::config("divergence needs episodes >= 1 and seeds >= 1"));
    }
    let mut report = DivergenceReport::default();
    for i in 0..seeds as u64 {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed + i;
        run_cfg.episodes = episodes.max(run_cfg.initial_random_episodes);
        run_cfg.output_dir = None;
        report.rows.extend(divergence_seed(run_cfg, settle_steps)?);
    }
    Ok(report)
}

fn divergence_seed(cfg: ExperimentConfig, settle_steps: usize) -> Result<Vec<DivergenceRow>> {
    let seed = cfg.seed;
    let mut trainer = Trainer::new(cfg)?;
    for _ in 0..trainer.cfg.episodes {
        let rec = trainer.run_next_episode()?;
        if let Some(msg) = rec.aborted {
            return Err(Error::non_finite(format!("episode {}: {msg}", rec.episode)));
        }
    }

    if trainer.cfg.planner.model == PlannerModel::Learned {
        trainer.retrain_dynamics()?;
    }
    let deen_sigma = trainer.cfg.regularizer.noise_scale;
    let dae_sigma = trainer.cfg.divergence.dae_noise_scale.unwrap_or(deen_sigma);
    trainer.retrain_regularizer(RegularizerKind::Deen, deen_sigma)?;
    trainer.retrain_regularizer(RegularizerKind::Dae, dae_sigma)?;

    let env = trainer.env.clone();
    let mut state = env.reset(derive_seed(seed, "divergence-reset", 0));
    if settle_steps > 0 {
        // Settle with the controller as trained, not the open-loop weights.
        let kind = trainer.cfg.regularizer.kind;
        let mut agent = trainer.agent(kind, trainer.cfg.regularizer.cost_multiplier)?;
        for t in 0..settle_steps {
            let (a, _) = agent.act(&state.obs, t as u64)?;
            state = env.step(&state, &a)?.state;
        }
    }

    let dynamics = trainer.dynamics_handle()?;
    let streams = CandidateStreams::new(derive_seed(seed, "open-loop", 0), settle_steps as u64);
    let mut rows = Vec::with_capacity(DIVERGENCE_KINDS.len());
    for kind in DIVERGENCE_KINDS {
        let alpha = divergence_alpha(&trainer.cfg, kind);
        let regularizer = trainer.regularizer(kind)?;
        let mut pc = trainer.cfg.planner.planner_config(env.spec(), kind, alpha, seed);
        pc.horizon = trainer.cfg.divergence.horizon;
        pc.warm_start_shift = false;
        let problem = Problem {
            dynamics: dynamics.as_ref(),
            regularizer: &regularizer,
            env: env.as_ref(),
            alpha,
            s0: &state.obs,
        };
        let plan = cem_plan(&problem, &pc, None, streams)?;

        let mut imagined_rewards = Vec::with_capacity(plan.actions.len());
        let mut s = state.obs.clone();
        for a in &plan.actions {
            imagined_rewards.push(env.reward(&s, a));
            let (mean, _) = dynamics.predict(&s, a)?;
            s = mean;
        }
        let mut realized_rewards = Vec::with_capacity(plan.actions.len());
        let mut real = state.clone();
        for a in &plan.actions {
            let out = env.step(&real, a)?;
            realized_rewards.push(env.reward(&real.obs, &out.action));
            real = out.state;
        }
        let imagined = plan.imagined_reward;
        let realized: f64 = realized_rewards.iter().sum();
        rows.push(DivergenceRow {
            seed,
            regularizer: kind,
            alpha,
            imagined,
            realized,
            gap: (imagined - realized).abs(),
            imagined_rewards,
            realized_rewards,
        });
    }
    Ok(rows)
}
