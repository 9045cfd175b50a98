//! Experiment-matrix orchestration: {algorithm x partition x strategy}
//! cells over one dataset, each run across all cross-validation folds, with
//! deterministic output layout.
//!
//! Cells run on a bounded worker pool; each cell writes only its own
//! directory tree and all shared artifacts (final table, plots) are written
//! serially afterwards, so the parallelism degree never changes any byte of
//! the output.

use crate::config::{ExperimentConfig, Normalize};
use crate::datahub::{kfold_plan, load_csv, minmax_normalize, Dataset, PartitionScheme};
use crate::engine::{run_experiment, EngineError, RunSpec, StrategyKind};
use crate::fedalgos::AlgoKind;
use crate::models::{ModelKind, ModelSpec};
use crate::report::{
    aggregate, dump_reconstruction, emit_svg, write_final_table_csv, write_metrics_csv,
    AggregateSeries, FinalTableRow, FoldSeries, PlotKind, ReportError,
};
use crate::seeds;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] crate::datahub::DataError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{0} experiment cell(s) failed:\n{1}")]
    Cells(usize, String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One cell of the experiment matrix.
#[derive(Debug, Clone)]
pub struct Cell {
    pub algo: AlgoKind,
    pub partition: PartitionScheme,
    pub strategy: StrategyKind,
}

impl Cell {
    pub fn id(&self, dataset: &str) -> String {
        format!(
            "{dataset}_{}_{}_{}",
            self.algo.name(),
            self.partition.name(),
            self.strategy.name()
        )
    }
}

/// The cell plan in deterministic execution order.
pub fn plan(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for algo in &cfg.algos {
        for &partition in &cfg.partitions {
            for &strategy in &cfg.strategies {
                cells.push(Cell {
                    algo: algo.clone(),
                    partition,
                    strategy,
                });
            }
        }
    }
    cells
}

/// Completed cell: its aggregate series plus the final-table row.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub aggregate: AggregateSeries,
}

/// Everything `run_matrix` produced, for programmatic consumers.
#[derive(Debug, Clone)]
pub struct MatrixResults {
    pub outcomes: Vec<CellOutcome>,
    pub final_rows: Vec<FinalTableRow>,
    pub out_dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads and (optionally) normalizes the configured dataset.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    let ds = load_csv(&cfg.dataset_path, cfg.has_header, cfg.grid_shape)?;
    Ok(match cfg.normalize {
        Normalize::Global => minmax_normalize(&ds),
        Normalize::None => ds,
    })
}

fn model_spec(cfg: &ExperimentConfig, ds: &Dataset) -> ModelSpec {
    match cfg.model_kind {
        ModelKind::Logreg => ModelSpec::logreg(ds.num_features(), ds.num_classes),
        ModelKind::Mlp => ModelSpec::mlp(ds.num_features(), cfg.hidden.clone(), ds.num_classes),
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    plan_: &crate::datahub::FoldPlan,
    cell: &Cell,
) -> Result<CellOutcome, EngineError> {
    let cell_dir = cfg.out_dir.join(cell.id(&cfg.dataset_name));
    let spec = RunSpec {
        fed: cfg.fed.clone(),
        algo: cell.algo.clone(),
        strategy: cell.strategy,
        recon: cfg.recon.clone(),
        model: model_spec(cfg, ds),
        scheme: cell.partition,
        master_seed: cfg.master_seed,
    };

    let mut fold_series = Vec::with_capacity(cfg.folds);
    for fold in 0..cfg.folds {
        let result = run_experiment(ds, plan_, fold, &spec)?;
        let fold_dir = cell_dir.join(format!("fold{fold}"));
        std::fs::create_dir_all(&fold_dir)
            .map_err(|e| EngineError::State(format!("mkdir {}: {e}", fold_dir.display())))?;
        let series = FoldSeries::from_logs(&result.logs);
        write_metrics_csv(&series, &fold_dir.join("metrics.csv"))
            .map_err(|e| EngineError::State(e.to_string()))?;
        if let Some(pair) = &result.snapshot_pair {
            let recon_dir = fold_dir.join("recon");
            std::fs::create_dir_all(&recon_dir)
                .map_err(|e| EngineError::State(format!("mkdir {}: {e}", recon_dir.display())))?;
            let json = serde_json::to_string_pretty(pair)
                .map_err(|e| EngineError::State(e.to_string()))?;
            std::fs::write(recon_dir.join("snapshot_pair.json"), json)
                .map_err(|e| EngineError::State(e.to_string()))?;
        }
        if cfg.dump_reconstructions {
            if let Some(silo) = &result.recon_silo {
                let recon_dir = fold_dir.join("recon");
                dump_reconstruction(silo, &recon_dir)
                    .map_err(|e| EngineError::State(e.to_string()))?;
            }
        }
        fold_series.push(series);
    }

    let agg = aggregate(cell.strategy.name(), &fold_series)
        .map_err(|e| EngineError::State(e.to_string()))?;
    let agg_dir = cell_dir.join("aggregate");
    std::fs::create_dir_all(&agg_dir)
        .map_err(|e| EngineError::State(format!("mkdir {}: {e}", agg_dir.display())))?;
    write_metrics_csv(&agg, &agg_dir.join("metrics.csv"))
        .map_err(|e| EngineError::State(e.to_string()))?;

    Ok(CellOutcome {
        cell: cell.clone(),
        aggregate: agg,
    })
}

/// Runs every cell of the experiment matrix on a pool of `jobs` workers,
/// writes per-fold and aggregate CSVs, group SVG plots, and the final
/// accuracy table.
pub fn run_matrix(cfg: &ExperimentConfig, jobs: usize) -> Result<MatrixResults, HarnessError> {
    let ds = load_dataset(cfg)?;
    let fold_plan = kfold_plan(
        &ds,
        cfg.folds,
        seeds::derive_seed(cfg.master_seed, 0, "split", 0),
    )?;
    let cells = plan(cfg);

    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool construction");
    let results: Vec<Result<CellOutcome, EngineError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(cfg, &ds, &fold_plan, cell))
            .collect()
    });

    let mut outcomes = Vec::with_capacity(cells.len());
    let mut failures = String::new();
    let mut failure_count = 0usize;
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(outcome) => outcomes.push(outcome),
            Err(e) => {
                failure_count += 1;
                failures.push_str(&format!("  {}: {e}\n", cell.id(&cfg.dataset_name)));
            }
        }
    }
    if failure_count > 0 {
        return Err(HarnessError::Cells(failure_count, failures));
    }

    // Final table, one row per cell, in plan order.
    let final_rows: Vec<FinalTableRow> = outcomes
        .iter()
        .map(|o| {
            let (acc_mean, acc_std) = o.aggregate.final_accuracy();
            FinalTableRow {
                dataset: cfg.dataset_name.clone(),
                algo: o.cell.algo.name().into(),
                partition: o.cell.partition.name().into(),
                strategy: o.cell.strategy.name().into(),
                acc_mean,
                acc_std,
            }
        })
        .collect();
    write_final_table_csv(&final_rows, &cfg.out_dir.join("final_table.csv"))?;

    // Group plots: one convergence and one similarity figure per
    // (algo, partition), all strategies overlaid.
    for algo in &cfg.algos {
        for &partition in &cfg.partitions {
            let series: Vec<AggregateSeries> = outcomes
                .iter()
                .filter(|o| o.cell.algo.name() == algo.name() && o.cell.partition == partition)
                .map(|o| o.aggregate.clone())
                .collect();
            if series.is_empty() {
                continue;
            }
            let group_dir = cfg.out_dir.join(format!(
                "{}_{}_{}",
                cfg.dataset_name,
                algo.name(),
                partition.name()
            ));
            std::fs::create_dir_all(&group_dir).map_err(io_err(&group_dir))?;
            emit_svg(
                &series,
                PlotKind::Convergence,
                &group_dir.join("convergence.svg"),
            )?;
            emit_svg(
                &series,
                PlotKind::Similarity,
                &group_dir.join("similarity.svg"),
            )?;
        }
    }

    Ok(MatrixResults {
        outcomes,
        final_rows,
        out_dir: cfg.out_dir.clone(),
    })
}
