//! Command-line driver: experiment-matrix runs, config validation, and
//! offline re-runs of reconstruction attacks from saved snapshot pairs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use dflsim_core::config::{parse_config, ConfigError, ExperimentConfig};
use dflsim_core::engine::{SnapshotPair, StrategyKind};
use dflsim_core::harness::{plan, run_matrix};
use dflsim_core::models::Model;
use dflsim_core::recon::{
    model_inversion, pseudo_gradient, random_data, run_gradient_inversion, ReconConfig,
};
use dflsim_core::report::dump_reconstruction;
use dflsim_core::seeds;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dflsim",
    about = "Deterministic simulator for client dropout in asynchronous decentralized federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment matrix described by a config file.
    Run(RunArgs),
    /// Parse and validate a config file without running anything.
    Validate { config: PathBuf },
    /// Re-run a reconstruction attack from a saved snapshot pair and dump
    /// the synthetic data.
    DumpRecon(DumpReconArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the fold count.
    #[arg(long)]
    folds: Option<usize>,
    /// Worker pool size for parallel cells. Results are identical for any
    /// value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Print the cell plan without executing.
    #[arg(long)]
    dry_run: bool,
    /// Run only this strategy (repeatable).
    #[arg(long = "strategy")]
    strategies: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackChoice {
    GradientInversion,
    ModelInversion,
    Random,
}

#[derive(Args)]
struct DumpReconArgs {
    /// Path to a snapshot_pair.json saved by an adaptive-strategy run.
    snapshot: PathBuf,
    /// Which attack to re-run.
    #[arg(long, value_enum, default_value = "gradient-inversion")]
    attack: AttackChoice,
    /// Output directory for the reconstruction dump.
    #[arg(long, default_value = "recon-dump")]
    out: PathBuf,
    /// Attack seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Optional experiment config supplying reconstruction parameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

enum AppError {
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e)
    }
}

fn runtime(e: impl std::fmt::Display) -> AppError {
    AppError::Runtime(e.to_string())
}

fn dispatch() -> Result<(), AppError> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { config } => {
            let cfg = parse_config(&config)?;
            let cells = plan(&cfg);
            println!(
                "ok: {} ({} cells x {} folds, seed {})",
                config.display(),
                cells.len(),
                cfg.folds,
                cfg.master_seed
            );
            Ok(())
        }
        Command::DumpRecon(args) => cmd_dump_recon(args),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) -> Result<(), AppError> {
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(folds) = args.folds {
        if folds < 2 {
            return Err(AppError::Config(ConfigError::Invariant(
                "--folds must be >= 2".into(),
            )));
        }
        cfg.folds = folds;
    }
    if !args.strategies.is_empty() {
        let mut filtered = Vec::new();
        for name in &args.strategies {
            let s = StrategyKind::parse(name).ok_or_else(|| {
                AppError::Config(ConfigError::Invariant(format!("unknown strategy {name:?}")))
            })?;
            filtered.push(s);
        }
        cfg.strategies = filtered;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), AppError> {
    let mut cfg = parse_config(&args.config)?;
    apply_overrides(&mut cfg, &args)?;

    let cells = plan(&cfg);
    if args.dry_run {
        println!(
            "plan: {} cells x {} folds (seed {}, out {})",
            cells.len(),
            cfg.folds,
            cfg.master_seed,
            cfg.out_dir.display()
        );
        for cell in &cells {
            println!("  {}", cell.id(&cfg.dataset_name));
        }
        return Ok(());
    }

    let results = run_matrix(&cfg, args.jobs).map_err(runtime)?;
    println!(
        "completed {} cells x {} folds -> {}",
        results.outcomes.len(),
        cfg.folds,
        results.out_dir.display()
    );
    for row in &results.final_rows {
        println!(
            "  {} {} {} {}: final accuracy {:.4} +/- {:.4}",
            row.dataset, row.algo, row.partition, row.strategy, row.acc_mean, row.acc_std
        );
    }
    Ok(())
}

fn cmd_dump_recon(args: DumpReconArgs) -> Result<(), AppError> {
    let text = std::fs::read_to_string(&args.snapshot)
        .map_err(|e| runtime(format!("cannot read {}: {e}", args.snapshot.display())))?;
    let pair: SnapshotPair =
        serde_json::from_str(&text).map_err(|e| runtime(format!("bad snapshot file: {e}")))?;

    let recon_cfg = match &args.config {
        Some(path) => parse_config(path)?.recon,
        None => ReconConfig::default(),
    };

    let mut rng = seeds::stream(args.seed, 0, "dump-recon");
    let silo = match args.attack {
        AttackChoice::ModelInversion => {
            let model = Model {
                spec: pair.model.clone(),
                params: pair.last_params(),
            };
            model_inversion(&model, &recon_cfg, pair.grid_shape, &mut rng).map_err(runtime)?
        }
        AttackChoice::GradientInversion => {
            let pg = pseudo_gradient(&pair.prev_params(), &pair.last_params(), pair.nominal_lr)
                .map_err(runtime)?;
            if pg.degenerate {
                eprintln!("warning: snapshots are identical; gradient target is zero");
            }
            let model = Model {
                spec: pair.model.clone(),
                params: pair.prev_params(),
            };
            run_gradient_inversion(&model, &pg.grad, &recon_cfg, pair.grid_shape, &mut rng)
                .map_err(runtime)?
        }
        AttackChoice::Random => {
            let d = pair.model.input_dim;
            let c = pair.model.num_classes;
            random_data(d, c, recon_cfg.n_points, pair.grid_shape, &mut rng)
        }
    };

    dump_reconstruction(&silo, &args.out).map_err(runtime)?;
    let final_loss = silo.trace.last().copied();
    match final_loss {
        Some(v) => println!(
            "dumped {} samples to {} (final attack loss {v:.6})",
            silo.len(),
            args.out.display()
        ),
        None => println!("dumped {} samples to {}", silo.len(), args.out.display()),
    }
    Ok(())
}
