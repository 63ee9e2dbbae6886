use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rolloutq::experiment::{ExperimentConfig, Pipeline, Preset};
use rolloutq::learner::Algorithm;
use std::path::PathBuf;
use std::time::Instant;

/// Offline model-based RL workbench on cart-pole.
#[derive(Parser, Debug)]
#[command(name = "rolloutq", version, about)]
struct Cli {
    /// TOML config; keys override the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Hyperparameter preset.
    #[arg(long, global = true, value_parser = parse_preset)]
    preset: Option<Preset>,

    /// Output directory shared by all stages.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,

    /// Added to the dataset seed and to every run seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect the random-policy dataset.
    Generate,
    /// Train the dynamics models and save all quality tiers.
    TrainModels,
    /// Blind vs. informed rollout divergence for every tier.
    RolloutCompare,
    /// MBRO, FQE and fitted-MBRO state values against true returns.
    EvaluateValues,
    /// Policy learning with NFQ or BSF-NFQ.
    Learn {
        #[arg(value_parser = parse_algorithm)]
        algorithm: Algorithm,
    },
    /// Summarize existing stage outputs and validate every CSV.
    Report,
    /// Every stage in order.
    All,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: rolloutq::error::Error| e.to_string())
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: rolloutq::error::Error| e.to_string())
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, cli.preset)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::preset(cli.preset.unwrap_or_default()),
    };
    Ok(cfg.with_seed_offset(cli.seed_offset))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let pipeline = Pipeline::new(cfg, &cli.out)
        .with_context(|| format!("preparing output directory {}", cli.out.display()))?;
    let start = Instant::now();
    match cli.command {
        Command::Generate => {
            pipeline.generate()?;
        }
        Command::TrainModels => {
            for (seed, errors) in pipeline.train_models()? {
                for e in errors {
                    println!("seed {seed} {:>8}: one-step error {:.6}", e.tier.label(), e.error.mean_scaled);
                }
            }
        }
        Command::RolloutCompare => {
            for (seed, tiers) in pipeline.rollout_compare()? {
                for t in tiers {
                    println!(
                        "seed {seed} {:>8}: blind {:.4}, informed {:.4}",
                        t.tier.label(),
                        t.blind_mean,
                        t.informed_mean
                    );
                }
            }
        }
        Command::EvaluateValues => {
            let s = pipeline.evaluate_values()?;
            for (name, e) in [("MBRO", &s.mbro), ("fitted MBRO", &s.fitted_mbro), ("FQE", &s.fqe)] {
                let corr = e.correlation.map(|c| format!("{:.4}", c.mean)).unwrap_or_else(|| "undefined".into());
                println!("{name:>12}: RMSE {:.3}, correlation {corr}", e.rmse.mean);
            }
        }
        Command::Learn { algorithm } => {
            let s = pipeline.learn(algorithm)?;
            println!("{algorithm}: optimal-policy ratio {:.1} %", 100.0 * s.optimal_ratio.mean);
        }
        Command::Report => {
            print!("{}", pipeline.report()?.to_markdown());
        }
        Command::All => {
            pipeline.generate()?;
            pipeline.train_models()?;
            pipeline.rollout_compare()?;
            pipeline.evaluate_values()?;
            for algo in Algorithm::ALL {
                pipeline.learn(algo)?;
            }
            print!("{}", pipeline.report()?.to_markdown());
        }
    }
    log::info!("finished in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
