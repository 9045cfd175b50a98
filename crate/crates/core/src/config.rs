//! Declarative experiment configuration: TOML with sections, every field
//! defaulted to the experiment-protocol values, unknown keys rejected.

use crate::datahub::PartitionScheme;
use crate::engine::{DropoutClient, FederationConfig, StrategyKind};
use crate::fedalgos::{AlgoKind, Discrepancy};
use crate::models::ModelKind;
use crate::recon::{DistanceChoice, GiParams, InitKind, MiParams, ReconConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: RawDataset,
    #[serde(default)]
    federation: RawFederation,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    matrix: RawMatrix,
    #[serde(default)]
    algo: RawAlgos,
    #[serde(default)]
    recon: RawRecon,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    name: String,
    path: PathBuf,
    #[serde(default)]
    has_header: bool,
    grid_shape: Option<[usize; 2]>,
    #[serde(default = "default_normalize")]
    normalize: String,
}

fn default_normalize() -> String {
    "global".into()
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawFederation {
    clients: Option<usize>,
    rounds: Option<usize>,
    pairs_per_round: Option<usize>,
    local_steps_min: Option<usize>,
    local_steps_max: Option<usize>,
    local_steps_set: Option<Vec<usize>>,
    dropout_round: Option<usize>,
    dropout_client: Option<usize>,
    folds: Option<usize>,
    seed: Option<u64>,
    batch_size: Option<usize>,
    early_stop_warmup: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Option<ModelKind>,
    hidden: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    algos: Option<Vec<String>>,
    partitions: Option<Vec<String>>,
    strategies: Option<Vec<String>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawAlgos {
    #[serde(default)]
    djam: RawDjam,
    #[serde(default)]
    fsr: RawFsr,
    #[serde(default)]
    dfedavgm: RawDFedAvgM,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDjam {
    lr: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawFsr {
    lr: Option<f64>,
    omega: Option<f64>,
    lambda: Option<f64>,
    probes: Option<usize>,
    discrepancy: Option<Discrepancy>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDFedAvgM {
    lr: Option<f64>,
    momentum: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRecon {
    points: Option<usize>,
    batch_size: Option<usize>,
    tv_weight: Option<f64>,
    domain_weight: Option<f64>,
    init: Option<InitKind>,
    pseudo_grad_lr: Option<f64>,
    #[serde(default)]
    model_inversion: RawMi,
    #[serde(default)]
    gradient_inversion: RawGi,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawMi {
    lr: Option<f64>,
    weight_decay: Option<f64>,
    epochs: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGi {
    lr: Option<f64>,
    epochs: Option<usize>,
    distance: Option<DistanceChoice>,
    joint_labels: Option<bool>,
    label_weight: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    dump_reconstructions: Option<bool>,
}

/// Feature normalization policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalize {
    /// Min-max to the unit interval over the full dataset before partitioning.
    Global,
    None,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset_name: String,
    pub dataset_path: PathBuf,
    pub has_header: bool,
    pub grid_shape: Option<(usize, usize)>,
    pub normalize: Normalize,
    pub fed: FederationConfig,
    pub folds: usize,
    pub master_seed: u64,
    pub model_kind: ModelKind,
    pub hidden: Vec<usize>,
    pub algos: Vec<AlgoKind>,
    pub partitions: Vec<PartitionScheme>,
    pub strategies: Vec<StrategyKind>,
    pub recon: ReconConfig,
    pub out_dir: PathBuf,
    pub dump_reconstructions: bool,
}

fn parse_algo(name: &str, raw: &RawAlgos) -> Result<AlgoKind, ConfigError> {
    match name {
        "djam" => Ok(AlgoKind::Djam {
            lr: raw.djam.lr.unwrap_or(0.1),
        }),
        "fsr" => Ok(AlgoKind::Fsr {
            lr: raw.fsr.lr.unwrap_or(0.1),
            omega: raw.fsr.omega.unwrap_or(0.01),
            lambda: raw.fsr.lambda.unwrap_or(50.0),
            probes: raw.fsr.probes.unwrap_or(500),
            discrepancy: raw.fsr.discrepancy.unwrap_or(Discrepancy::Squared),
        }),
        "dfedavgm" => Ok(AlgoKind::DFedAvgM {
            lr: raw.dfedavgm.lr.unwrap_or(0.01),
            momentum: raw.dfedavgm.momentum.unwrap_or(0.9),
        }),
        other => Err(ConfigError::Invariant(format!(
            "unknown algorithm {other:?}"
        ))),
    }
}

fn parse_partition(name: &str) -> Result<PartitionScheme, ConfigError> {
    match name {
        "iid" => Ok(PartitionScheme::Iid),
        "clusters" => Ok(PartitionScheme::Clusters),
        "classes" => Ok(PartitionScheme::Classes),
        other => Err(ConfigError::Invariant(format!(
            "unknown partition scheme {other:?}"
        ))),
    }
}

/// Parses and validates a TOML config file. Omitted fields take the
/// experiment-protocol defaults; unknown keys are rejected by name.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    resolve(raw, path.parent().unwrap_or(Path::new(".")))
}

fn resolve(raw: RawConfig, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let fed = FederationConfig {
        clients: raw.federation.clients.unwrap_or(3),
        rounds: raw.federation.rounds.unwrap_or(200),
        pairs_per_round: raw.federation.pairs_per_round.unwrap_or(2),
        local_steps_min: raw.federation.local_steps_min.unwrap_or(5),
        local_steps_max: raw.federation.local_steps_max.unwrap_or(10),
        local_steps_set: raw.federation.local_steps_set.clone(),
        dropout_round: raw.federation.dropout_round.unwrap_or(5),
        dropout_client: match raw.federation.dropout_client {
            Some(id) => DropoutClient::Fixed(id),
            None => DropoutClient::Random,
        },
        batch_size: raw.federation.batch_size,
        early_stop_warmup: raw.federation.early_stop_warmup.unwrap_or(0),
    };
    fed.validate()
        .map_err(|e| ConfigError::Invariant(e.to_string()))?;

    let model_kind = raw.model.kind.unwrap_or(ModelKind::Logreg);
    let hidden = match (model_kind, raw.model.hidden.clone()) {
        (ModelKind::Logreg, Some(h)) if !h.is_empty() => {
            return Err(ConfigError::Invariant(
                "model.hidden is only valid for kind = \"mlp\"".into(),
            ))
        }
        (ModelKind::Logreg, _) => Vec::new(),
        (ModelKind::Mlp, Some(h)) => {
            if h.is_empty() || h.contains(&0) {
                return Err(ConfigError::Invariant(
                    "model.hidden must list positive widths".into(),
                ));
            }
            h
        }
        (ModelKind::Mlp, None) => vec![128, 128],
    };

    let algo_names = raw
        .matrix
        .algos
        .clone()
        .unwrap_or_else(|| vec!["dfedavgm".into(), "djam".into(), "fsr".into()]);
    let algos = algo_names
        .iter()
        .map(|n| parse_algo(n, &raw.algo))
        .collect::<Result<Vec<_>, _>>()?;
    if algos.is_empty() {
        return Err(ConfigError::Invariant("matrix.algos is empty".into()));
    }
    for a in &algos {
        a.validate()
            .map_err(|e| ConfigError::Invariant(e.to_string()))?;
    }

    let partition_names = raw
        .matrix
        .partitions
        .clone()
        .unwrap_or_else(|| vec!["iid".into(), "clusters".into(), "classes".into()]);
    let partitions = partition_names
        .iter()
        .map(|n| parse_partition(n))
        .collect::<Result<Vec<_>, _>>()?;
    if partitions.is_empty() {
        return Err(ConfigError::Invariant("matrix.partitions is empty".into()));
    }

    let strategies = match &raw.matrix.strategies {
        None => StrategyKind::ALL.to_vec(),
        Some(names) if names.is_empty() => StrategyKind::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| {
                StrategyKind::parse(n)
                    .ok_or_else(|| ConfigError::Invariant(format!("unknown strategy {n:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?,
    };

    let recon = ReconConfig {
        n_points: raw.recon.points.unwrap_or(50),
        batch_size: raw.recon.batch_size.unwrap_or(16),
        tv_weight: raw.recon.tv_weight.unwrap_or(0.01),
        domain_weight: raw.recon.domain_weight.unwrap_or(0.1),
        init: raw.recon.init.unwrap_or(InitKind::Uniform),
        mi: MiParams {
            lr: raw.recon.model_inversion.lr.unwrap_or(0.01),
            weight_decay: raw.recon.model_inversion.weight_decay.unwrap_or(0.01),
            epochs: raw.recon.model_inversion.epochs.unwrap_or(1000),
        },
        gi: GiParams {
            lr: raw.recon.gradient_inversion.lr.unwrap_or(0.05),
            epochs: raw.recon.gradient_inversion.epochs.unwrap_or(2000),
            distance: raw
                .recon
                .gradient_inversion
                .distance
                .unwrap_or(DistanceChoice::Both),
            joint_labels: raw.recon.gradient_inversion.joint_labels.unwrap_or(true),
            label_weight: raw.recon.gradient_inversion.label_weight.unwrap_or(1.0),
        },
        pseudo_grad_lr: raw.recon.pseudo_grad_lr,
    };

    let normalize = match raw.dataset.normalize.as_str() {
        "global" => Normalize::Global,
        "none" => Normalize::None,
        other => {
            return Err(ConfigError::Invariant(format!(
                "unknown normalize mode {other:?} (expected \"global\" or \"none\")"
            )))
        }
    };

    let dataset_path = if raw.dataset.path.is_absolute() {
        raw.dataset.path.clone()
    } else {
        base_dir.join(&raw.dataset.path)
    };
    if !dataset_path.exists() {
        return Err(ConfigError::Invariant(format!(
            "dataset file {} does not exist",
            dataset_path.display()
        )));
    }

    let folds = raw.federation.folds.unwrap_or(10);
    if folds < 2 {
        return Err(ConfigError::Invariant("folds must be >= 2".into()));
    }

    Ok(ExperimentConfig {
        dataset_name: raw.dataset.name,
        dataset_path,
        has_header: raw.dataset.has_header,
        grid_shape: raw.dataset.grid_shape.map(|[r, c]| (r, c)),
        normalize,
        fed,
        folds,
        master_seed: raw.federation.seed.unwrap_or(42),
        model_kind,
        hidden,
        algos,
        partitions,
        strategies,
        recon,
        out_dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("out")),
        dump_reconstructions: raw.output.dump_reconstructions.unwrap_or(true),
    })
}
