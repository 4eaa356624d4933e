use std::sync::Arc;

use serde_json::Value;

use super::config::PlannerSettings;
use super::derive_seed;
use crate::dynamics::Dynamics;
use crate::envs::{true_dynamics_oracle, Environment};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::planner::{MpcAgent, Regularizer, RegularizerKind};

/// Everything needed to rebuild the controller a checkpoint was trained with.
#[derive(Clone)]
pub struct SavedPolicy {
    pub env: Arc<dyn Environment>,
    pub dynamics: Arc<dyn Dynamics>,
    pub regularizer: Arc<Regularizer>,
    pub alpha: f64,
    pub planner: PlannerSettings,
}

fn meta_field<T: serde::de::DeserializeOwned>(meta: &Value, key: &str) -> Result<Option<T>> {
    match meta.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::Format(format!("metadata field {key}: {e}"))),
    }
}

impl SavedPolicy {
    /// Missing metadata falls back to default planner settings and no
    /// regularizer; a checkpoint without dynamics plans with the true model.
    pub fn from_checkpoint(ck: &Checkpoint, env: Arc<dyn Environment>) -> Result<Self> {
        let meta: Value = match &ck.meta {
            Some(m) => serde_json::from_str(m).map_err(|e| Error::Format(format!("metadata is not JSON: {e}")))?,
            None => Value::Null,
        };
        if let Some(trained_on) = meta_field::<String>(&meta, "env")? {
            if trained_on != env.spec().name {
                return Err(Error::Config(format!(
                    "model was trained on {trained_on}, not {}",
                    env.spec().name
                )));
            }
        }
        let planner = meta_field::<PlannerSettings>(&meta, "planner")?.unwrap_or_default();
        let kind = meta_field::<RegularizerKind>(&meta, "regularizer")?.unwrap_or(RegularizerKind::None);
        let alpha = meta_field::<f64>(&meta, "cost_multiplier")?.unwrap_or(0.0);
        let regularizer = match kind {
            RegularizerKind::None => Regularizer::None,
            RegularizerKind::Deen => Regularizer::Deen(
                ck.energy
                    .clone()
                    .ok_or_else(|| Error::Format("checkpoint has no energy model".into()))?,
            ),
            RegularizerKind::Dae => Regularizer::Dae(
                ck.denoiser
                    .clone()
                    .ok_or_else(|| Error::Format("checkpoint has no denoiser".into()))?,
            ),
        };
        let dynamics: Arc<dyn Dynamics> = match &ck.dynamics {
            Some(m) => {
                if m.state_dim() != env.spec().state_dim || m.action_dim() != env.spec().action_dim {
                    return Err(Error::shape("checkpoint dynamics do not match the environment"));
                }
                Arc::new(m.clone())
            }
            None => Arc::new(true_dynamics_oracle(env.clone())),
        };
        Ok(Self {
            env,
            dynamics,
            regularizer: Arc::new(regularizer),
            alpha,
            planner,
        })
    }

    /// Fresh MPC agent; candidate streams derive from `seed` and `episode`.
    pub fn agent(&self, seed: u64, episode: u64) -> Result<MpcAgent> {
        let pc = self.planner.planner_config(
            self.env.spec(),
            self.regularizer.kind(),
            self.alpha,
            derive_seed(seed, "eval-plan", episode),
        );
        MpcAgent::new(self.dynamics.clone(), self.regularizer.clone(), self.env.clone(), pc)
    }
}
