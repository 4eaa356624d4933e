use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use energy_mpc::density::GaussianMixture1D;
use energy_mpc::envs::make_env;
use energy_mpc::harness::{
    divergence_experiment, fig3_experiment, final_mean_return, run_episode, training_loop, ExperimentConfig,
    Fig3Settings, Policy, SavedPolicy, DIVERGENCE_KINDS,
};
use energy_mpc::io::Checkpoint;

#[derive(Parser)]
#[command(name = "energy-mpc", version, about = "Energy-regularized model-based planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a model from scratch and control the environment with MPC.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare DEEN and DAE estimates with a known 1-D mixture.
    Fig3 {
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "fig3.csv")]
        out: PathBuf,
    },
    /// Imagined versus realized return of open-loop plans.
    Divergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 50)]
        settle: usize,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a saved model with MPC and report returns.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, seed, out } => train(config, seed, out),
        Command::Fig3 {
            sigma,
            samples,
            seed,
            out,
        } => fig3(sigma, samples, seed, out),
        Command::Divergence {
            config,
            episodes,
            settle,
            seeds,
            out,
        } => divergence(config, episodes, settle, seeds, out),
        Command::Eval {
            model,
            env,
            episodes,
            seed,
        } => eval(model, env, episodes, seed),
    }
}

fn train(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    let records = training_loop(&cfg)?;
    for r in &records {
        println!("episode {:>3} {:>6} return {:>10.3}", r.episode, r.policy, r.return_);
    }
    println!("final-3 mean return {:.3}", final_mean_return(&records, 3));
    if let Some(dir) = &cfg.output_dir {
        println!("outputs written to {}", dir.display());
    }
    Ok(())
}

fn fig3(sigma: f64, samples: usize, seed: u64, out: PathBuf) -> Result<()> {
    let settings = Fig3Settings {
        seed,
        ..Fig3Settings::default()
    };
    let mix = GaussianMixture1D::symmetric_pair();
    let r = fig3_experiment(&mix, samples, sigma, &settings, Some(&out))?;
    println!("interval [{:.3}, {:.3}] with {} points", r.interval.0, r.interval.1, r.grid.len());
    println!("deen energy rmse (offset removed) {:.4}", r.energy_rmse);
    println!("deen score rmse {:.4}", r.deen_score_rmse);
    println!("dae score rmse {:.4}", r.dae_score_rmse);
    println!("grid written to {}", out.display());
    Ok(())
}

fn divergence(config: PathBuf, episodes: usize, settle: usize, seeds: usize, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    let report = divergence_experiment(&cfg, episodes, settle, seeds)?;
    println!("{:>6} {:>6} {:>8} {:>12} {:>12} {:>10}", "seed", "reg", "alpha", "imagined", "realized", "gap");
    for r in &report.rows {
        println!(
            "{:>6} {:>6} {:>8.4} {:>12.3} {:>12.3} {:>10.3}",
            r.seed,
            format!("{:?}", r.regularizer).to_lowercase(),
            r.alpha,
            r.imagined,
            r.realized,
            r.gap
        );
    }
    for kind in DIVERGENCE_KINDS {
        println!(
            "mean {:>5}: gap {:.3} realized {:.3}",
            format!("{kind:?}").to_lowercase(),
            report.mean_gap(kind),
            report.mean_realized(kind)
        );
    }
    if let Some(path) = out {
        report.write_csv(&path)?;
        println!("rows written to {}", path.display());
    }
    Ok(())
}

fn eval(model: PathBuf, env_name: String, episodes: usize, seed: u64) -> Result<()> {
    let ck = Checkpoint::load(&model).with_context(|| format!("loading {}", model.display()))?;
    let env = make_env(&env_name)?;
    let policy = SavedPolicy::from_checkpoint(&ck, env.clone())?;
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut agent = policy.agent(seed, ep as u64)?;
        let (rec, _) = run_episode(env.as_ref(), Policy::Mpc(&mut agent), seed, ep, env.spec().horizon)?;
        if let Some(msg) = &rec.aborted {
            bail!("episode {ep} aborted: {msg}");
        }
        println!("episode {ep:>3} return {:>10.3}", rec.return_);
        returns.push(rec.return_);
    }
    let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    println!("mean return {mean:.3}");
    Ok(())
}
