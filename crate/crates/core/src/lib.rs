//! Deterministic desk-scale simulator for asynchronous decentralized
//! federated learning (DFL) under persistent client dropout.
//!
//! The crate is organized in layers:
//!
//! - [`diffmath`]: dense matrices, parameter vectors, losses, first- and
//!   second-order gradients, SGD-momentum and Adam optimizers.
//! - [`models`]: multinomial logistic regression and MLP classifiers.
//! - [`datahub`]: CSV ingestion, normalization, stratified k-fold plans,
//!   k-means, and the three client partitioning schemes.
//! - [`fedalgos`]: the DJAM, FSR, and DFedAvgM local-update and exchange
//!   policies over a shared client-state shape.
//! - [`engine`]: the asynchronous round loop, dropout injection, mitigation
//!   strategy dispatch, early stopping, and per-round logging.
//! - [`recon`]: client reconstruction — the random baseline, gradient
//!   inversion, and model inversion attacks plus virtual-client assembly.
//! - [`report`]: fold aggregation, CSV metric tables, SVG plots, and
//!   reconstructed-sample dumps.
//! - [`config`] / [`harness`]: declarative experiment configuration and the
//!   {dataset x algorithm x partition x strategy} matrix runner.
//!
//! Every run is a pure function of (config, dataset bytes, master seed);
//! reruns and different `--jobs` settings produce byte-identical output.

pub mod config;
pub mod datahub;
pub mod diffmath;
pub mod engine;
pub mod fedalgos;
pub mod harness;
pub mod models;
pub mod recon;
pub mod report;
pub mod seeds;

pub use config::{ConfigError, ExperimentConfig};
pub use datahub::{Dataset, FoldPlan, PartitionScheme, Silo};
pub use diffmath::{Labels, Matrix, OptState, ParamVec};
pub use engine::{FederationConfig, RoundLog, StrategyKind};
pub use fedalgos::{AlgoKind, ClientState, CommGraph};
pub use models::{Model, ModelKind, ModelSpec};
pub use recon::{ReconConfig, SyntheticSilo};
pub use report::AggregateSeries;
