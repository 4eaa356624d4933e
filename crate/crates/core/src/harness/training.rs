use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use super::buffer::ReplayBuffer;
use super::config::{epoch_schedule, ExperimentConfig, PlannerModel};
use super::derive_seed;
use super::episode::{run_episode, EpisodeRecord, Policy};
use crate::density::{train_dae, train_deen, DenoiserModel, EnergyModel};
use crate::dynamics::{train_dynamics, Dynamics, DynamicsModel};
use crate::envs::{make_env, true_dynamics_oracle, Environment};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::planner::{MpcAgent, Regularizer, RegularizerKind};

/// Losses from one retraining round.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub dyn_train_nll: Option<f64>,
    pub dyn_holdout_nll: Option<f64>,
    pub reg_train_loss: Option<f64>,
}

fn diverged(episode: usize, model: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite(_) => Error::Divergence {
            episode,
            model: model.to_owned(),
        },
        other => other,
    }
}

/// State of one experiment: environment, buffer, and current models.
pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub env: Arc<dyn Environment>,
    pub buffer: ReplayBuffer,
    pub dynamics: Option<DynamicsModel>,
    pub energy: Option<EnergyModel>,
    pub denoiser: Option<DenoiserModel>,
    pub episodes_done: usize,
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let env = make_env(&cfg.env)?;
        let spec = env.spec();
        let buffer = ReplayBuffer::new(spec.state_dim, spec.action_dim);
        Ok(Self {
            cfg,
            env,
            buffer,
            dynamics: None,
            energy: None,
            denoiser: None,
            episodes_done: 0,
        })
    }

    pub fn episode_length(&self) -> usize {
        self.cfg.episode_length.unwrap_or(self.env.spec().horizon)
    }

    /// Retrain the dynamics model (unless planning with the oracle) and the
    /// configured regularizer on the whole buffer.
    pub fn retrain(&mut self) -> Result<TrainStats> {
        let mut stats = TrainStats::default();
        if self.cfg.planner.model == PlannerModel::Learned {
            let (train, holdout) = self.retrain_dynamics()?;
            stats.dyn_train_nll = Some(train);
            stats.dyn_holdout_nll = Some(holdout);
        }
        let kind = self.cfg.regularizer.kind;
        if kind != RegularizerKind::None {
            stats.reg_train_loss = Some(self.retrain_regularizer(kind, self.cfg.regularizer.noise_scale)?);
        }
        Ok(stats)
    }

    pub fn retrain_dynamics(&mut self) -> Result<(f64, f64)> {
        let k = self.episodes_done;
        let m = &self.cfg.model;
        let epochs = epoch_schedule(m.epochs, k, &m.schedule)?;
        let train_cfg = m.train_config(epochs, derive_seed(self.cfg.seed, "dynamics", k as u64));
        let init = if self.cfg.reinit_models { None } else { self.dynamics.as_ref() };
        let batch = self.buffer.to_batch()?;
        let (model, report) = train_dynamics(&batch, &train_cfg, init).map_err(diverged(k, "dynamics"))?;
        self.dynamics = Some(model);
        let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
        Ok((last(&report.train_nll), last(&report.holdout_nll)))
    }

    /// Train a regularizer of `kind` with corruption scale `sigma` and keep
    /// it. Returns the final training loss.
    pub fn retrain_regularizer(&mut self, kind: RegularizerKind, sigma: f64) -> Result<f64> {
        let k = self.episodes_done;
        let r = &self.cfg.regularizer;
        let epochs = epoch_schedule(r.epochs, k, &r.schedule)?;
        let vectors = self.buffer.transition_vectors();
        match kind {
            RegularizerKind::None => Ok(0.0),
            RegularizerKind::Deen => {
                let cfg = r.train_config(epochs, derive_seed(self.cfg.seed, "deen", k as u64), sigma);
                let init = match (&self.energy, self.cfg.reinit_models) {
                    (Some(m), false) => Some(&m.params),
                    _ => None,
                };
                let (m, rep) = train_deen(&vectors, &cfg, init).map_err(diverged(k, "deen"))?;
                self.energy = Some(m);
                Ok(rep.final_train_loss())
            }
            RegularizerKind::Dae => {
                let cfg = r.train_config(epochs, derive_seed(self.cfg.seed, "dae", k as u64), sigma);
                let init = match (&self.denoiser, self.cfg.reinit_models) {
                    (Some(m), false) if m.sigma == sigma => Some(&m.params),
                    _ => None,
                };
                let (m, rep) = train_dae(&vectors, &cfg, init).map_err(diverged(k, "dae"))?;
                self.denoiser = Some(m);
                Ok(rep.final_train_loss())
            }
        }
    }

    pub fn dynamics_handle(&self) -> Result<Arc<dyn Dynamics>> {
        match self.cfg.planner.model {
            PlannerModel::Oracle => Ok(Arc::new(true_dynamics_oracle(self.env.clone()))),
            PlannerModel::Learned => self
                .dynamics
                .clone()
                .map(|m| Arc::new(m) as Arc<dyn Dynamics>)
                .ok_or_else(|| Error::contract("no dynamics model has been trained yet")),
        }
    }

    pub fn regularizer(&self, kind: RegularizerKind) -> Result<Regularizer> {
        let missing = || Error::contract(format!("no {kind:?} regularizer has been trained yet"));
        Ok(match kind {
            RegularizerKind::None => Regularizer::None,
            RegularizerKind::Deen => Regularizer::Deen(self.energy.clone().ok_or_else(missing)?),
            RegularizerKind::Dae => Regularizer::Dae(self.denoiser.clone().ok_or_else(missing)?),
        })
    }

    /// Agent for the next episode using the given regularizer and weight.
    pub fn agent(&self, kind: RegularizerKind, alpha: f64) -> Result<MpcAgent> {
        let seed = derive_seed(self.cfg.seed, "plan", self.episodes_done as u64);
        let pc = self.cfg.planner.planner_config(self.env.spec(), kind, alpha, seed);
        MpcAgent::new(
            self.dynamics_handle()?,
            Arc::new(self.regularizer(kind)?),
            self.env.clone(),
            pc,
        )
    }

    fn finish(&mut self, mut record: EpisodeRecord, transitions: Vec<super::buffer::Transition>) -> Result<EpisodeRecord> {
        self.buffer.extend(transitions)?;
        self.episodes_done += 1;
        record.buffer_size = self.buffer.len();
        Ok(record)
    }

    pub fn run_random_episode(&mut self) -> Result<EpisodeRecord> {
        let (rec, ts) = run_episode(
            self.env.as_ref(),
            Policy::Random,
            self.cfg.seed,
            self.episodes_done,
            self.episode_length(),
        )?;
        self.finish(rec, ts)
    }

    /// Retrain, then run one MPC episode with the configured regularizer.
    pub fn run_planned_episode(&mut self) -> Result<EpisodeRecord> {
        let stats = self.retrain()?;
        let r = &self.cfg.regularizer;
        let mut agent = self.agent(r.kind, r.cost_multiplier)?;
        let (mut rec, ts) = run_episode(
            self.env.as_ref(),
            Policy::Mpc(&mut agent),
            self.cfg.seed,
            self.episodes_done,
            self.episode_length(),
        )?;
        rec.dyn_train_nll = stats.dyn_train_nll;
        rec.dyn_holdout_nll = stats.dyn_holdout_nll;
        rec.reg_train_loss = stats.reg_train_loss;
        self.finish(rec, ts)
    }

    /// Next episode of the schedule: random for the first
    /// `initial_random_episodes`, planned afterwards.
    pub fn run_next_episode(&mut self) -> Result<EpisodeRecord> {
        if self.episodes_done < self.cfg.initial_random_episodes {
            self.run_random_episode()
        } else {
            self.run_planned_episode()
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "env": self.cfg.env,
            "episodes": self.episodes_done,
            "regularizer": self.cfg.regularizer.kind,
            "cost_multiplier": self.cfg.regularizer.cost_multiplier,
            "planner": self.cfg.planner,
        });
        Checkpoint {
            dynamics: self.dynamics.clone(),
            energy: self.energy.clone(),
            denoiser: self.denoiser.clone(),
            meta: Some(meta.to_string()),
        }
    }
}

#[derive(Serialize)]
struct MetricsRow {
    episode: usize,
    #[serde(rename = "return")]
    return_: f64,
    buffer_size: usize,
    dyn_train_nll: Option<f64>,
    dyn_holdout_nll: Option<f64>,
    reg_train_loss: Option<f64>,
    mean_imagined_reward: Option<f64>,
    mean_realized_reward: Option<f64>,
    wall_clock_s: Option<f64>,
}

#[derive(Serialize)]
struct StepRow {
    episode: usize,
    step: usize,
    imagined_reward: Option<f64>,
    realized_reward: f64,
}

/// Per-episode CSV outputs, flushed after every row.
pub struct MetricsWriter {
    dir: PathBuf,
    metrics: csv::Writer<File>,
    steps: csv::Writer<File>,
    record_wall_clock: bool,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

impl MetricsWriter {
    pub fn create(dir: impl AsRef<Path>, record_wall_clock: bool) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            metrics: csv::Writer::from_path(dir.join("metrics.csv")).map_err(csv_err)?,
            steps: csv::Writer::from_path(dir.join("steps.csv")).map_err(csv_err)?,
            dir,
            record_wall_clock,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, r: &EpisodeRecord) -> Result<()> {
        self.metrics
            .serialize(MetricsRow {
                episode: r.episode,
                return_: r.return_,
                buffer_size: r.buffer_size,
                dyn_train_nll: r.dyn_train_nll,
                dyn_holdout_nll: r.dyn_holdout_nll,
                reg_train_loss: r.reg_train_loss,
                mean_imagined_reward: r.mean_imagined_reward(),
                mean_realized_reward: r.mean_realized_reward(),
                wall_clock_s: self.record_wall_clock.then_some(r.wall_clock_s),
            })
            .map_err(csv_err)?;
        self.metrics.flush()?;
        for (step, realized) in r.realized_rewards.iter().enumerate() {
            self.steps
                .serialize(StepRow {
                    episode: r.episode,
                    step,
                    imagined_reward: r.imagined_rewards.get(step).copied(),
                    realized_reward: *realized,
                })
                .map_err(csv_err)?;
        }
        self.steps.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    env: &'a str,
    seed: u64,
    episodes: usize,
    returns: Vec<f64>,
    final_3_mean_return: f64,
    config: &'a ExperimentConfig,
}

/// Mean return of the last `k` records.
pub fn final_mean_return(records: &[EpisodeRecord], k: usize) -> f64 {
    let tail = &records[records.len().saturating_sub(k)..];
    tail.iter().map(|r| r.return_).sum::<f64>() / tail.len().max(1) as f64
}

/// Random exploration followed by alternating retraining and MPC episodes.
/// With an output directory, metrics are persisted after every episode and
/// a summary plus model checkpoint are written at the end.
pub fn training_loop(cfg: &ExperimentConfig) -> Result<Vec<EpisodeRecord>> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut writer = match &cfg.output_dir {
        Some(d) => Some(MetricsWriter::create(d, cfg.record_wall_clock)?),
        None => None,
    };
    let mut records = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let rec = trainer.run_next_episode()?;
        log::info!(
            "episode {} ({}) return {:.2} buffer {}",
            rec.episode,
            rec.policy,
            rec.return_,
            rec.buffer_size
        );
        if let Some(w) = writer.as_mut() {
            w.write(&rec)?;
        }
        if let Some(msg) = &rec.aborted {
            return Err(Error::non_finite(format!("episode {}: {msg}", rec.episode)));
        }
        records.push(rec);
    }
    if let Some(w) = &writer {
        let summary = Summary {
            env: &cfg.env,
            seed: cfg.seed,
            episodes: records.len(),
            returns: records.iter().map(|r| r.return_).collect(),
            final_3_mean_return: final_mean_return(&records, 3),
            config: cfg,
        };
        let mut f = File::create(w.dir().join("summary.json"))?;
        serde_json::to_writer_pretty(&mut f, &summary).map_err(|e| Error::Format(e.to_string()))?;
        f.write_all(b"\n")?;
        trainer.checkpoint().save(w.dir().join("model.bin"))?;
    }
    Ok(records)
}
