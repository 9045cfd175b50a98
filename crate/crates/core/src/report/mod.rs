//! Aggregation of per-round logs across folds, CSV metric tables, SVG
//! plots, and reconstructed-sample dumps.
//!
//! All writers are deterministic byte-for-byte given identical inputs:
//! fixed 6-decimal formatting, LF line endings, stable iteration order.

mod svg;

pub use svg::{render_svg, strategy_color, PlotKind, LOG_FLOOR};

use crate::diffmath::ParamVec;
use crate::engine::RoundLog;
use crate::models::param_l2_distance;
use crate::recon::SyntheticSilo;
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("write to {path} failed: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Math(#[from] crate::diffmath::DiffMathError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Mean pairwise L2 distance over all unordered pairs of parameter vectors.
pub fn similarity(clients: &[&ParamVec]) -> Result<f64, ReportError> {
    if clients.len() < 2 {
        return Err(ReportError::Precondition(
            "similarity needs at least two models".into(),
        ));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..clients.len() {
        for j in (i + 1)..clients.len() {
            total += param_l2_distance(clients[i], clients[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Sample standard deviation (n-1 denominator; 0 when n <= 1).
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n <= 1 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    var.sqrt()
}

/// Per-round metrics of a single fold: accuracy statistics over clients and
/// similarity statistics over model pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSeries {
    pub acc_mean: Vec<f64>,
    pub acc_std: Vec<f64>,
    pub sim_mean: Vec<f64>,
    pub sim_std: Vec<f64>,
}

impl FoldSeries {
    pub fn from_logs(logs: &[RoundLog]) -> FoldSeries {
        let mut s = FoldSeries {
            acc_mean: Vec::with_capacity(logs.len()),
            acc_std: Vec::with_capacity(logs.len()),
            sim_mean: Vec::with_capacity(logs.len()),
            sim_std: Vec::with_capacity(logs.len()),
        };
        for log in logs {
            s.acc_mean.push(log.mean_accuracy);
            s.acc_std.push(sample_std(&log.accuracies));
            s.sim_mean.push(log.mean_pair_distance);
            let dists: Vec<f64> = log.pair_distances.iter().map(|&(_, _, d)| d).collect();
            s.sim_std.push(sample_std(&dists));
        }
        s
    }

    pub fn rounds(&self) -> usize {
        self.acc_mean.len()
    }
}

/// Cross-fold aggregate: per-round mean and std (over folds) of the fold
/// means. Early-stopped folds are padded by carrying their last value
/// forward so every fold aligns at the longest executed round.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSeries {
    pub strategy: String,
    pub acc_mean: Vec<f64>,
    pub acc_std: Vec<f64>,
    pub sim_mean: Vec<f64>,
    pub sim_std: Vec<f64>,
}

impl AggregateSeries {
    pub fn rounds(&self) -> usize {
        self.acc_mean.len()
    }

    pub(crate) fn point(&self, i: usize, kind: PlotKind) -> (f64, f64) {
        match kind {
            PlotKind::Convergence => (self.acc_mean[i], self.acc_std[i]),
            PlotKind::Similarity => (self.sim_mean[i], self.sim_std[i]),
        }
    }

    /// (mean, std) accuracy at the final (padded) round.
    pub fn final_accuracy(&self) -> (f64, f64) {
        let i = self.rounds() - 1;
        (self.acc_mean[i], self.acc_std[i])
    }

    pub fn final_similarity(&self) -> (f64, f64) {
        let i = self.rounds() - 1;
        (self.sim_mean[i], self.sim_std[i])
    }
}

/// Value of `series` at round index `i`, padded with the last value.
fn padded(series: &[f64], i: usize) -> f64 {
    if i < series.len() {
        series[i]
    } else {
        *series.last().expect("empty fold series")
    }
}

/// Aggregates fold series into per-round mean/std over folds.
pub fn aggregate(strategy: &str, folds: &[FoldSeries]) -> Result<AggregateSeries, ReportError> {
    if folds.is_empty() || folds.iter().any(|f| f.rounds() == 0) {
        return Err(ReportError::Precondition(
            "aggregate needs at least one nonempty fold series".into(),
        ));
    }
    let rounds = folds.iter().map(|f| f.rounds()).max().unwrap();
    let mut out = AggregateSeries {
        strategy: strategy.to_string(),
        acc_mean: Vec::with_capacity(rounds),
        acc_std: Vec::with_capacity(rounds),
        sim_mean: Vec::with_capacity(rounds),
        sim_std: Vec::with_capacity(rounds),
    };
    for i in 0..rounds {
        let accs: Vec<f64> = folds.iter().map(|f| padded(&f.acc_mean, i)).collect();
        let sims: Vec<f64> = folds.iter().map(|f| padded(&f.sim_mean, i)).collect();
        out.acc_mean
            .push(accs.iter().sum::<f64>() / accs.len() as f64);
        out.acc_std.push(sample_std(&accs));
        out.sim_mean
            .push(sims.iter().sum::<f64>() / sims.len() as f64);
        out.sim_std.push(sample_std(&sims));
    }
    Ok(out)
}

/// Rows of the per-round metrics CSV: one source for both fold-level and
/// aggregate-level files.
pub trait MetricsRows {
    fn rows(&self) -> usize;
    fn row(&self, i: usize) -> (f64, f64, f64, f64);
}

impl MetricsRows for FoldSeries {
    fn rows(&self) -> usize {
        self.rounds()
    }
    fn row(&self, i: usize) -> (f64, f64, f64, f64) {
        (
            self.acc_mean[i],
            self.acc_std[i],
            self.sim_mean[i],
            self.sim_std[i],
        )
    }
}

impl MetricsRows for AggregateSeries {
    fn rows(&self) -> usize {
        self.rounds()
    }
    fn row(&self, i: usize) -> (f64, f64, f64, f64) {
        (
            self.acc_mean[i],
            self.acc_std[i],
            self.sim_mean[i],
            self.sim_std[i],
        )
    }
}

/// Writes `round,acc_mean,acc_std,sim_mean,sim_std` with a header row,
/// 6-decimal fixed point, LF endings.
pub fn write_metrics_csv(series: &impl MetricsRows, path: &Path) -> Result<(), ReportError> {
    let mut out = String::from("round,acc_mean,acc_std,sim_mean,sim_std\n");
    for i in 0..series.rows() {
        let (am, asd, sm, ssd) = series.row(i);
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            i + 1,
            am,
            asd,
            sm,
            ssd
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// One row of the final accuracy table.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalTableRow {
    pub dataset: String,
    pub algo: String,
    pub partition: String,
    pub strategy: String,
    pub acc_mean: f64,
    pub acc_std: f64,
}

pub fn write_final_table_csv(rows: &[FinalTableRow], path: &Path) -> Result<(), ReportError> {
    let mut out = String::from("dataset,algo,partition,strategy,acc_mean,acc_std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6}\n",
            r.dataset, r.algo, r.partition, r.strategy, r.acc_mean, r.acc_std
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Renders and writes one SVG plot for a set of strategy series.
pub fn emit_svg(
    series: &[AggregateSeries],
    kind: PlotKind,
    path: &Path,
) -> Result<(), ReportError> {
    let svg = render_svg(series, kind)?;
    fs::write(path, svg).map_err(io_err(path))
}

/// Dumps a reconstructed silo: always a CSV of X' and hard labels; when the
/// data lives on a pixel grid additionally one 8-bit PGM per sample named
/// `sample_<idx>_class_<c>.pgm`.
pub fn dump_reconstruction(silo: &SyntheticSilo, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join("reconstruction.csv");
    let mut out = String::new();
    let d = silo.x.cols();
    for j in 0..d {
        out.push_str(&format!("x{j},"));
    }
    out.push_str("label\n");
    for i in 0..silo.len() {
        for &v in silo.x.row(i) {
            out.push_str(&format!("{v:.6},"));
        }
        out.push_str(&format!("{}\n", silo.labels_hard[i]));
    }
    fs::write(&csv_path, out).map_err(io_err(&csv_path))?;

    if let Some((rows, cols)) = silo.grid_shape {
        for i in 0..silo.len() {
            let name = format!("sample_{i}_class_{}.pgm", silo.labels_hard[i]);
            let path = dir.join(name);
            let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
            for &v in silo.x.row(i) {
                bytes.push((255.0 * v).round().clamp(0.0, 255.0) as u8);
            }
            let mut f = fs::File::create(&path).map_err(io_err(&path))?;
            f.write_all(&bytes).map_err(io_err(&path))?;
        }
    }
    Ok(())
}
