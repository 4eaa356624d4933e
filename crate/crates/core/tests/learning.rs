//! Model quality on problems with known answers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use energy_mpc::density::{train_dae, train_deen, DensityTrainConfig, NoiseConfig};
use energy_mpc::dynamics::{train_dynamics, Dynamics, DynamicsTrainConfig, TransitionBatch};
use energy_mpc::envs::make_env;
use energy_mpc::harness::{run_episode, Policy};

fn linear_batch(n: usize, seed: u64) -> TransitionBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut a, mut s2) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let x: f64 = rng.random_range(-2.0..2.0);
        let u: f64 = rng.random_range(-1.0..1.0);
        s.push(x);
        a.push(u);
        s2.push(0.9 * x + 0.1 * u);
    }
    TransitionBatch::new(1, 1, s, a, s2).unwrap()
}

fn linear_cfg() -> DynamicsTrainConfig {
    DynamicsTrainConfig {
        hidden_layers: 2,
        hidden_size: 32,
        epochs: 200,
        batch_size: 32,
        lr: 3e-3,
        seed: 1,
        holdout_fraction: 0.1,
    }
}

#[test]
fn dynamics_learn_a_linear_system() {
    let (model, report) = train_dynamics(&linear_batch(1000, 0), &linear_cfg(), None).unwrap();
    assert!(!report.warning());
    let mut worst = 0.0f64;
    for i in 0..=40 {
        for j in 0..=10 {
            let x = -1.8 + 3.6 * i as f64 / 40.0;
            let u = -0.9 + 1.8 * j as f64 / 10.0;
            let (mean, var) = model.predict(&[x], &[u]).unwrap();
            worst = worst.max((mean[0] - (0.9 * x + 0.1 * u)).abs());
            assert!(var[0] > 0.0 && var[0].is_finite());
        }
    }
    assert!(worst <= 1e-2, "max one-step error {worst}");

    // Ten steps under a constant action against the closed form.
    let (x0, u) = (1.5, -0.5);
    let rollout = model.rollout(&[x0], &vec![vec![u]; 10]).unwrap();
    let mut x = x0;
    for (k, s) in rollout.iter().enumerate() {
        x = 0.9 * x + 0.1 * u;
        assert!((s[0] - x).abs() <= 0.05, "step {k}: {} vs {x}", s[0]);
    }
}

#[test]
fn dynamics_training_is_deterministic() {
    let batch = linear_batch(300, 3);
    let cfg = DynamicsTrainConfig {
        epochs: 5,
        ..linear_cfg()
    };
    let (a, ra) = train_dynamics(&batch, &cfg, None).unwrap();
    let (b, rb) = train_dynamics(&batch, &cfg, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn identity_transitions_roll_out_without_drift() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut s, mut a) = (Vec::new(), Vec::new());
    for _ in 0..500 {
        s.push(rng.random_range(-2.0..2.0));
        s.push(rng.random_range(-2.0..2.0));
        a.push(rng.random_range(-1.0..1.0));
    }
    let batch = TransitionBatch::new(2, 1, s.clone(), a, s).unwrap();
    let cfg = DynamicsTrainConfig {
        epochs: 20,
        ..linear_cfg()
    };
    // Zero-variance deltas are flagged but still train.
    let (model, report) = train_dynamics(&batch, &cfg, None).unwrap();
    assert!(report.warning());
    let h = 15;
    let out = model.rollout(&[0.7, -1.2], &vec![vec![0.3]; h]).unwrap();
    let last = out.last().unwrap();
    let drift = ((last[0] - 0.7).powi(2) + (last[1] + 1.2).powi(2)).sqrt();
    assert!(drift <= 1e-2 * h as f64, "drift {drift}");
}

#[test]
fn pendulum_model_beats_the_persistence_baseline() {
    let env = make_env("pendulum").unwrap();
    let mut transitions = Vec::new();
    for ep in 0..5 {
        let (_, t) = run_episode(env.as_ref(), Policy::Random, 9, ep, 200).unwrap();
        transitions.extend(t);
    }
    let batch = TransitionBatch::new(
        3,
        1,
        transitions.iter().flat_map(|t| t.s.clone()).collect(),
        transitions.iter().flat_map(|t| t.a.clone()).collect(),
        transitions.iter().flat_map(|t| t.s_next.clone()).collect(),
    )
    .unwrap();
    let cfg = DynamicsTrainConfig {
        epochs: 60,
        ..DynamicsTrainConfig::default()
    };
    let (model, _) = train_dynamics(&batch, &cfg, None).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut model_se, mut persist_se) = (0.0, 0.0);
    let (_, test) = run_episode(env.as_ref(), Policy::Random, 1234, 0, 200).unwrap();
    for t in &test {
        let a = [rng.random_range(-2.0..2.0)];
        let truth = env.transition(&t.s, &a);
        let (pred, _) = model.predict(&t.s, &a).unwrap();
        for i in 0..3 {
            model_se += (pred[i] - truth[i]).powi(2);
            persist_se += (t.s[i] - truth[i]).powi(2);
        }
    }
    assert!(
        5.0 * model_se.sqrt() <= persist_se.sqrt(),
        "model rmse {} vs persistence {}",
        model_se.sqrt(),
        persist_se.sqrt()
    );
}

const DAE_SAMPLES: usize = 40_000;
const DAE_EPOCHS: usize = 60;

fn gaussian_samples(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn density_cfg(seed: u64) -> DensityTrainConfig {
    DensityTrainConfig {
        noise: NoiseConfig { sigma: 0.5, seed },
        epochs: 150,
        batch_size: 64,
        lr: 3e-3,
        hidden_layers: 2,
        hidden_size: 32,
        holdout_fraction: 0.1,
    }
}

fn probe_points(radius: f64) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    for i in 0..=16 {
        for j in 0..=16 {
            let p = [-radius + 2.0 * radius * i as f64 / 16.0, -radius + 2.0 * radius * j as f64 / 16.0];
            if p[0].hypot(p[1]) <= radius {
                pts.push(p);
            }
        }
    }
    pts
}

#[test]
fn deen_recovers_the_smoothed_gaussian_score() {
    let xs = gaussian_samples(4000, 2, 21);
    let (model, report) = train_deen(&xs, &density_cfg(1), None).unwrap();
    assert!(report.final_train_loss().is_finite());
    // The smoothed density is N(0, (1 + sigma^2) I) in normalized units.
    let s2 = model.sigma * model.sigma;
    let pts = probe_points(2.0);
    let mut se = 0.0;
    for p in &pts {
        let s = model.score(p).unwrap();
        for k in 0..2 {
            let want = -(p[k] - model.normalizer.mean[k]) / model.normalizer.std[k].powi(2) / (1.0 + s2);
            se += (s[k] - want).powi(2);
        }
    }
    let rmse = (se / (2 * pts.len()) as f64).sqrt();
    assert!(rmse <= 0.1, "score rmse {rmse}");
}

#[test]
fn dae_recovers_the_gaussian_posterior_mean() {
    let xs = gaussian_samples(DAE_SAMPLES, 2, 22);
    let cfg = DensityTrainConfig {
        epochs: DAE_EPOCHS,
        batch_size: 512,
        lr: 3e-4,
        ..density_cfg(2)
    };
    let (model, _) = train_dae(&xs, &cfg, None).unwrap();
    // Posterior mean under a Gaussian prior, in normalized units.
    let s2 = model.sigma * model.sigma;
    let mut worst = 0.0f64;
    for p in probe_points(2.0) {
        let d = model.denoise(&p).unwrap();
        for k in 0..2 {
            let m = model.normalizer.mean[k];
            let want = m + (p[k] - m) / (1.0 + s2);
            worst = worst.max((d[k] - want).abs());
        }
    }
    assert!(worst <= 0.05, "max denoising error {worst}");

    let penalties: Vec<f64> = (0..=3)
        .map(|r| model.penalty(&[0.6 * r as f64, 0.8 * r as f64]).unwrap())
        .collect();
    assert!(penalties.windows(2).all(|w| w[0] < w[1]), "{penalties:?}");
}
