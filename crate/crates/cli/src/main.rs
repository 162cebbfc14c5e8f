use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use steerlab::artifacts::RunDir;
use steerlab::checks::{self, BimodalConfig};
use steerlab::commands;
use steerlab::experiment::ExperimentConfig;
use steerlab::report::{self, Criterion};
use steerlab::sim::{TrackConfig, VehicleParams};

/// Behavioral-cloning steering experiments: dataset generation, training,
/// closed-loop evaluation, ablations and reports.
#[derive(Debug, Parser)]
#[command(name = "steerlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel evaluation episodes.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record the expert dataset.
    Generate(Common),
    /// Train every configured variant for every seed.
    Train(Common),
    /// Drive every trained model on the evaluation tracks.
    Evaluate(Common),
    /// Negative-sampling and data-scaling ablations plus the label histogram.
    Ablate(Common),
    /// Aggregate run directories into tables and the acceptance list.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directories to aggregate.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory; defaults to the first run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also run the checks that need no run directory (gradients, loss
    /// identities, bimodal benchmark, actuator noise, expert, metrics).
    #[arg(long)]
    checks: bool,
    /// Seed of the self-contained checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Usage problems exit with status 2, like argument errors.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn load_config(common: &Common) -> anyhow::Result<(ExperimentConfig, RunDir)> {
    let text = std::fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    if text.trim().is_empty() {
        return Err(Usage(format!("configuration {} is empty", common.config.display())).into());
    }
    let mut cfg = ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    let dir = RunDir::new(&cfg.output);
    Ok((cfg, dir))
}

fn self_checks(seed: u64) -> anyhow::Result<(Vec<Criterion>, (usize, usize))> {
    let noise = checks::white_noise_smoothing(100, 600, seed, &VehicleParams::default(), 0.1)?;
    let criteria = vec![
        checks::check_gradients(100, seed)?,
        checks::check_loss_identities(200, seed)?,
        checks::check_bimodal(&BimodalConfig::default())?,
        checks::check_expert(50, seed, &TrackConfig::default())?,
        checks::check_metric_examples()?,
    ];
    Ok((criteria, noise))
}

fn report(args: &ReportArgs) -> anyhow::Result<bool> {
    let runs: Vec<RunDir> = args.runs.iter().map(RunDir::new).collect();
    let out = RunDir::new(args.out.clone().unwrap_or_else(|| args.runs[0].clone()));
    let (criteria, noise) = if args.checks {
        let (c, n) = self_checks(args.seed)?;
        (c, Some(n))
    } else {
        (Vec::new(), None)
    };
    let result = commands::report(&runs, &out, criteria, noise)?;
    for c in &result.criteria {
        println!("{}", c.line());
    }
    for f in &result.files {
        log::info!("wrote {}", f.display());
    }
    Ok(!report::any_failed(&result.criteria))
}

fn announce(dir: &Path, what: &str) {
    println!("{what} -> {}", dir.display());
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Generate(c) => {
            let (cfg, dir) = load_config(&c)?;
            let m = commands::generate(&cfg, &dir)?;
            announce(
                &dir.root,
                &format!(
                    "{} recordings, fork-label bimodality coefficient {:.3}",
                    m.recordings.len(),
                    m.fork_labels.coefficient
                ),
            );
        }
        Command::Train(c) => {
            let (cfg, dir) = load_config(&c)?;
            for o in commands::train(&cfg, &dir)? {
                println!(
                    "{} seed {}: validation MAE {:.3}{}",
                    o.variant,
                    o.seed,
                    o.best_val_mae,
                    if o.skipped { " (existing)" } else { "" }
                );
            }
        }
        Command::Evaluate(c) => {
            let (cfg, dir) = load_config(&c)?;
            let t = commands::evaluate(&cfg, &dir, c.jobs)?;
            for m in report::means(&t.episodes) {
                println!(
                    "{}: crashes {:.2}, W_cmd {:.2}, W_eff {:.2}",
                    m.model, m.crashes, m.w_cmd, m.w_eff
                );
            }
            announce(&dir.root, &format!("{} episodes", t.episodes.len()));
        }
        Command::Ablate(c) => {
            let (cfg, dir) = load_config(&c)?;
            let t = commands::ablate(&cfg, &dir, c.jobs)?;
            announce(
                &dir.root,
                &format!("{} sampling rows, {} scaling rows", t.sampling.len(), t.scaling.len()),
            );
        }
        Command::Report(args) => return report(&args),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
