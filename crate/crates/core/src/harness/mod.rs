//! Experiment orchestration: data collection, retraining, MPC episodes,
//! the open-loop divergence study and the 1-D density comparison.

pub mod buffer;
pub mod config;
pub mod divergence;
pub mod episode;
pub mod fig3;
pub mod policy;
pub mod training;

pub use buffer::{ReplayBuffer, Transition};
pub use config::{
    epoch_schedule, DivergenceSettings, EpochSchedule, ExperimentConfig, ModelSettings, PlannerModel,
    PlannerSettings, RegularizerSettings,
};
pub use divergence::{divergence_alpha, divergence_experiment, DivergenceReport, DivergenceRow, DIVERGENCE_KINDS};
pub use episode::{run_episode, EpisodeRecord, Policy};
pub use fig3::{fig3_experiment, Fig3Point, Fig3Report, Fig3Settings};
pub use policy::SavedPolicy;
pub use training::{final_mean_return, training_loop, MetricsWriter, TrainStats, Trainer};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-seed for the stream named `tag` at position `index`.
/// Pure in its arguments, so reruns with the same root seed coincide.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(splitmix64(seed) ^ h) ^ index)
}
