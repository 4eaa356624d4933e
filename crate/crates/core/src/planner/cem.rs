use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{unflatten, Evaluation, PlanResult, PlannerConfig, Problem};
use crate::error::{Error, Result};

/// Counter-based random streams keyed by `(seed, timestep)`; every
/// `(iteration, candidate)` pair owns an independent ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CandidateStreams {
    pub seed: u64,
    pub timestep: u64,
}

impl CandidateStreams {
    pub fn new(seed: u64, timestep: u64) -> Self {
        Self { seed, timestep }
    }

    pub fn rng(&self, iteration: usize, candidate: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.timestep.to_le_bytes());
        key[16..20].copy_from_slice(b"cem\0");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(((iteration as u64) << 32) | candidate as u64);
        rng
    }
}

fn sample_candidate(
    streams: &CandidateStreams,
    iteration: usize,
    candidate: usize,
    mean: &[f64],
    std: &[f64],
    config: &PlannerConfig,
    out: &mut [f64],
) {
    let mut rng = streams.rng(iteration, candidate);
    for ((o, m), s) in out.iter_mut().zip(mean).zip(std) {
        let z: f64 = rng.sample(StandardNormal);
        *o = m + s * z;
    }
    config.clip(out);
}

/// Cross-entropy search over flat action sequences with a caller-supplied
/// batch evaluator. `eval` receives `n x (H + 1) x dim(a)` candidates and
/// must score each row independently of the others.
pub fn cem_plan_with<F>(
    eval: F,
    config: &PlannerConfig,
    warm_start: Option<&[f64]>,
    streams: CandidateStreams,
) -> Result<PlanResult>
where
    F: Fn(&[f64]) -> Vec<Evaluation> + Sync,
{
    config.validate()?;
    let da = config.action_dim();
    let len = config.steps() * da;
    let mut mean = match warm_start {
        Some(w) if w.len() == len => w.to_vec(),
        Some(w) => {
            return Err(Error::shape(format!(
                "warm start has {} entries, expected {len}",
                w.len()
            )))
        }
        None => config.default_mean(),
    };
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("warm start"));
    }
    let start = mean.clone();
    let per_dim = config.initial_std();
    let mut std: Vec<f64> = (0..len).map(|i| per_dim[i % da].max(config.std_floor)).collect();

    let n = config.population;
    let mut best: Option<(f64, Vec<f64>, Evaluation)> = None;
    let mut trace = Vec::with_capacity(config.iterations);
    let mut samples = vec![0.0; n * len];

    for it in 0..config.iterations {
        let evals: Vec<Evaluation> = if config.parallel && n > 1 {
            let chunk = n.div_ceil(4 * rayon::current_num_threads()).max(8);
            samples
                .par_chunks_mut(chunk * len)
                .enumerate()
                .flat_map_iter(|(b, block)| {
                    for (k, cand) in block.chunks_mut(len).enumerate() {
                        sample_candidate(&streams, it, b * chunk + k, &mean, &std, config, cand);
                    }
                    eval(block)
                })
                .collect()
        } else {
            for (c, cand) in samples.chunks_mut(len).enumerate() {
                sample_candidate(&streams, it, c, &mean, &std, config, cand);
            }
            eval(&samples)
        };
        if evals.len() != n {
            return Err(Error::contract("evaluator returned the wrong number of values"));
        }

        for (c, e) in evals.iter().enumerate() {
            let better = match &best {
                None => e.value > f64::NEG_INFINITY,
                Some((v, _, _)) => e.value > *v,
            };
            if better {
                best = Some((e.value, samples[c * len..(c + 1) * len].to_vec(), *e));
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| evals[b].value.total_cmp(&evals[a].value).then(a.cmp(&b)));
        let elites = &order[..config.elites];
        let k = elites.len() as f64;
        trace.push(elites.iter().map(|&i| evals[i].value).sum::<f64>() / k);

        for j in 0..len {
            let m = elites.iter().map(|&i| samples[i * len + j]).sum::<f64>() / k;
            let var = elites
                .iter()
                .map(|&i| (samples[i * len + j] - m).powi(2))
                .sum::<f64>()
                / k;
            mean[j] = m;
            std[j] = var.sqrt().max(config.std_floor);
        }
    }

    Ok(match best {
        Some((value, seq, e)) => PlanResult {
            actions: unflatten(&seq, da),
            objective: value,
            elite_trace: trace,
            imagined_reward: e.reward,
            imagined_penalty: e.penalty,
            all_invalid: false,
        },
        None => {
            log::warn!("every CEM candidate had a non-finite objective");
            PlanResult {
                actions: unflatten(&start, da),
                objective: f64::NEG_INFINITY,
                elite_trace: trace,
                imagined_reward: f64::NAN,
                imagined_penalty: f64::NAN,
                all_invalid: true,
            }
        }
    })
}

/// CEM on the regularized planning objective of `problem`.
pub fn cem_plan(
    problem: &Problem<'_>,
    config: &PlannerConfig,
    warm_start: Option<&[f64]>,
    streams: CandidateStreams,
) -> Result<PlanResult> {
    problem.validate(config.action_dim())?;
    let steps = config.steps();
    let mut result = cem_plan_with(
        |batch| problem.evaluate_batch(batch, steps, false),
        config,
        warm_start,
        streams,
    )?;
    if !result.all_invalid && !problem.weighted() && problem.regularizer.dim().is_some() {
        let flat: Vec<f64> = result.actions.iter().flatten().copied().collect();
        result.imagined_penalty = problem.evaluate_batch(&flat, steps, true)[0].penalty;
    }
    Ok(result)
}
