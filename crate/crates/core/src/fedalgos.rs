//! The three DFL algorithms as local-training and exchange policies over a
//! shared client-state shape: DJAM (parameter-space regularization),
//! DFedAvgM (mix then train on the data loss), and FSR (function-space
//! regularization estimated with Monte-Carlo probes).

use crate::datahub::Silo;
use crate::diffmath::{
    forward_cache, forward_probs, grad_params, sgd_momentum_step, DiffMathError, Labels, Matrix,
    OptState, ParamVec,
};
use crate::models::Model;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum FedError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("client {0} silo accessed after dropout")]
    DeadSiloAccess(usize),
    #[error(transparent)]
    Math(#[from] DiffMathError),
}

/// Monte-Carlo output-space discrepancy form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discrepancy {
    /// Probe mean of the squared L2 difference between probability outputs.
    Squared,
    /// Square root of the squared form.
    Root,
}

/// Algorithm selector with per-algorithm hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AlgoKind {
    Djam {
        lr: f64,
    },
    Fsr {
        lr: f64,
        omega: f64,
        lambda: f64,
        probes: usize,
        discrepancy: Discrepancy,
    },
    DFedAvgM {
        lr: f64,
        momentum: f64,
    },
}

impl AlgoKind {
    pub fn djam_default() -> Self {
        AlgoKind::Djam { lr: 0.1 }
    }

    pub fn fsr_default() -> Self {
        AlgoKind::Fsr {
            lr: 0.1,
            omega: 0.01,
            lambda: 50.0,
            probes: 500,
            discrepancy: Discrepancy::Squared,
        }
    }

    pub fn dfedavgm_default() -> Self {
        AlgoKind::DFedAvgM {
            lr: 0.01,
            momentum: 0.9,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlgoKind::Djam { .. } => "djam",
            AlgoKind::Fsr { .. } => "fsr",
            AlgoKind::DFedAvgM { .. } => "dfedavgm",
        }
    }

    /// Nominal local learning rate, the scale used for pseudo-gradient
    /// extraction.
    pub fn nominal_lr(&self) -> f64 {
        match *self {
            AlgoKind::Djam { lr } => lr,
            AlgoKind::Fsr { lr, .. } => lr,
            AlgoKind::DFedAvgM { lr, .. } => lr,
        }
    }

    pub fn make_optimizer(&self, len: usize) -> OptState {
        match *self {
            AlgoKind::Djam { lr } => OptState::sgd_momentum(lr, 0.0, len),
            AlgoKind::Fsr { lr, .. } => OptState::sgd_momentum(lr, 0.0, len),
            AlgoKind::DFedAvgM { lr, momentum } => OptState::sgd_momentum(lr, momentum, len),
        }
    }

    pub fn validate(&self) -> Result<(), FedError> {
        let ok = match *self {
            AlgoKind::Djam { lr } => lr > 0.0,
            AlgoKind::Fsr {
                lr, omega, probes, ..
            } => lr > 0.0 && omega > 0.0 && omega < 1.0 && probes >= 1,
            AlgoKind::DFedAvgM { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(FedError::Precondition(format!(
                "invalid hyperparameters for {}",
                self.name()
            )))
        }
    }
}

/// Weighted communication graph; `g[i][j] > 0` permits exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    m: usize,
    weights: Vec<f64>,
}

impl CommGraph {
    /// The experiment default: g_ij = 1 for i != j, g_ii = 0.
    pub fn fully_connected(m: usize) -> Self {
        let mut weights = vec![1.0; m * m];
        for i in 0..m {
            weights[i * m + i] = 0.0;
        }
        CommGraph { m, weights }
    }

    pub fn clients(&self) -> usize {
        self.m
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.m..(i + 1) * self.m]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.m;
        (0..m).filter(move |&j| j != i && self.weight(i, j) > 0.0)
    }

    /// Undirected edges (i < j) with positive weight.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.m {
            for j in (i + 1)..self.m {
                if self.weight(i, j) > 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Disconnects a client by zeroing its row and column.
    pub fn remove_client(&mut self, i: usize) {
        for j in 0..self.m {
            self.weights[i * self.m + j] = 0.0;
            self.weights[j * self.m + i] = 0.0;
        }
    }
}

/// One client's full training state. The silo is guarded: after dropout the
/// engine revokes it and any later access is a hard error.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub model: Model,
    /// Parameters (or output source) captured at the start of the current
    /// local phase.
    pub prev_snapshot: ParamVec,
    /// Latest received copy of each neighbor's parameters.
    pub neighbor_cache: BTreeMap<usize, ParamVec>,
    pub opt: OptState,
    pub alive: bool,
    /// True for reconstruction-based replacement clients.
    pub is_virtual: bool,
    silo: Option<Silo>,
}

impl ClientState {
    pub fn new(id: usize, model: Model, silo: Silo, algo: &AlgoKind) -> Self {
        let opt = algo.make_optimizer(model.params.len());
        let prev_snapshot = model.params.clone();
        ClientState {
            id,
            model,
            prev_snapshot,
            neighbor_cache: BTreeMap::new(),
            opt,
            alive: true,
            is_virtual: false,
            silo: Some(silo),
        }
    }

    pub fn silo(&self) -> Result<&Silo, FedError> {
        self.silo.as_ref().ok_or(FedError::DeadSiloAccess(self.id))
    }

    /// Drops the silo permanently (dropout). The data is gone: there is no
    /// way to get it back through this state.
    pub fn revoke_silo(&mut self) {
        self.silo = None;
    }

    pub fn has_silo(&self) -> bool {
        self.silo.is_some()
    }

    /// Captures the pre-phase snapshot used by self-regularization terms.
    pub fn begin_local_phase(&mut self) {
        self.prev_snapshot = self.model.params.clone();
    }
}

fn check_batch(x: &Matrix, y: &[usize]) -> Result<(), FedError> {
    if x.rows() == 0 {
        return Err(FedError::Precondition("empty training batch".into()));
    }
    if x.rows() != y.len() {
        return Err(FedError::Precondition(format!(
            "batch has {} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    Ok(())
}

/// Regularization neighbors: positive graph weight paired with the cached
/// parameter copy.
fn reg_neighbors<'a>(state: &'a ClientState, graph_row: &[f64]) -> Vec<(f64, &'a ParamVec)> {
    state
        .neighbor_cache
        .iter()
        .filter(|(j, _)| graph_row[**j] > 0.0)
        .map(|(j, p)| (graph_row[*j], p))
        .collect()
}

/// DJAM local objective:
/// L_d + ||theta - theta_prev||^2 + 1/2 sum_j g_ij ||theta - cache_j||^2
/// with squared L2 norms. Returns (loss, gradient).
pub fn djam_objective(
    params: &ParamVec,
    prev: &ParamVec,
    neighbors: &[(f64, &ParamVec)],
    x: &Matrix,
    y: &[usize],
) -> Result<(f64, ParamVec), FedError> {
    let probs = forward_probs(params, x)?;
    let data_loss = crate::diffmath::cross_entropy(&probs, Labels::Hard(y))?;
    let mut grad = grad_params(params, x, Labels::Hard(y))?;

    let self_diff = params.sub(prev);
    let mut loss = data_loss + self_diff.as_slice().iter().map(|v| v * v).sum::<f64>();
    grad.add_scaled(2.0, &self_diff);

    for (g_ij, cache) in neighbors {
        let diff = params.sub(cache);
        loss += 0.5 * g_ij * diff.as_slice().iter().map(|v| v * v).sum::<f64>();
        grad.add_scaled(*g_ij, &diff);
    }
    Ok((loss, grad))
}

/// One DJAM local step: SGD (no momentum) on the DJAM objective.
pub fn djam_local_step(
    state: &mut ClientState,
    graph_row: &[f64],
    x: &Matrix,
    y: &[usize],
) -> Result<(), FedError> {
    check_batch(x, y)?;
    let neighbors = reg_neighbors(state, graph_row);
    let (_, grad) = djam_objective(&state.model.params, &state.prev_snapshot, &neighbors, x, y)?;
    sgd_momentum_step(&mut state.opt, &mut state.model.params, &grad)?;
    Ok(())
}

/// Monte-Carlo function-space discrepancy between two parameter vectors:
/// probe mean of the squared L2 difference of probability outputs
/// (optionally its square root).
pub fn fsr_discrepancy(
    a: &ParamVec,
    b: &ParamVec,
    probes: &Matrix,
    form: Discrepancy,
) -> Result<f64, FedError> {
    let pa = forward_probs(a, probes)?;
    let pb = forward_probs(b, probes)?;
    let sq = pa.sub(&pb).sum_sq() / probes.rows() as f64;
    Ok(match form {
        Discrepancy::Squared => sq,
        Discrepancy::Root => sq.sqrt(),
    })
}

const ROOT_GUARD: f64 = 1e-12;

/// FSR local objective:
/// L_d + ((1-omega)/omega) D(f, f_prev) + (lambda/N) sum_j g_ij D(f, f_j)
/// where D is the probe-estimated output discrepancy. Returns (loss, grad).
#[allow(clippy::too_many_arguments)]
pub fn fsr_objective(
    params: &ParamVec,
    prev: &ParamVec,
    neighbors: &[(f64, &ParamVec)],
    probes: &Matrix,
    omega: f64,
    lambda: f64,
    form: Discrepancy,
    x: &Matrix,
    y: &[usize],
) -> Result<(f64, ParamVec), FedError> {
    let probs = forward_probs(params, x)?;
    let data_loss = crate::diffmath::cross_entropy(&probs, Labels::Hard(y))?;
    let mut grad = grad_params(params, x, Labels::Hard(y))?;
    let mut loss = data_loss;

    let k = probes.rows() as f64;
    let cache = forward_cache(params, probes)?;
    let self_weight = (1.0 - omega) / omega;
    let n_neighbors = neighbors.len();

    // Each regularizer differentiates through the same probe forward pass;
    // combine the upstream output gradients and backprop once.
    let mut dprobs = Matrix::zeros(probes.rows(), cache.probs.cols());
    let add_term = |target: &ParamVec, weight: f64, dprobs: &mut Matrix| -> Result<f64, FedError> {
        let pt = forward_probs(target, probes)?;
        let diff = cache.probs.sub(&pt);
        let sq = diff.sum_sq() / k;
        let (value, scale) = match form {
            Discrepancy::Squared => (sq, 1.0),
            Discrepancy::Root => {
                let root = sq.sqrt();
                (root, 1.0 / (2.0 * root.max(ROOT_GUARD)))
            }
        };
        let upstream = diff.scale(2.0 / k * weight * scale);
        for (acc, v) in dprobs.as_mut_slice().iter_mut().zip(upstream.as_slice()) {
            *acc += v;
        }
        Ok(weight * value)
    };

    loss += add_term(prev, self_weight, &mut dprobs)?;
    if n_neighbors > 0 {
        let neighbor_weight = lambda / n_neighbors as f64;
        for (g_ij, cache_params) in neighbors {
            loss += add_term(cache_params, neighbor_weight * g_ij, &mut dprobs)?;
        }
    }

    let (reg_grad, _) = crate::diffmath::grad_from_dprobs(params, &cache, &dprobs);
    grad.add_scaled(1.0, &reg_grad);
    Ok((loss, grad))
}

/// One FSR local step: SGD (no momentum) on the FSR objective with fresh
/// probes for this step.
#[allow(clippy::too_many_arguments)]
pub fn fsr_local_step(
    state: &mut ClientState,
    graph_row: &[f64],
    x: &Matrix,
    y: &[usize],
    probes: &Matrix,
    omega: f64,
    lambda: f64,
    form: Discrepancy,
) -> Result<(), FedError> {
    check_batch(x, y)?;
    if probes.cols() != state.model.spec.input_dim {
        return Err(FedError::Math(DiffMathError::Shape(format!(
            "probes have {} features, model expects {}",
            probes.cols(),
            state.model.spec.input_dim
        ))));
    }
    let neighbors = reg_neighbors(state, graph_row);
    let (_, grad) = fsr_objective(
        &state.model.params,
        &state.prev_snapshot,
        &neighbors,
        probes,
        omega,
        lambda,
        form,
        x,
        y,
    )?;
    sgd_momentum_step(&mut state.opt, &mut state.model.params, &grad)?;
    Ok(())
}

/// Draws `count` probe points uniformly from the unit hypercube.
pub fn draw_probes(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(count, dim);
    for v in m.as_mut_slice() {
        *v = rng.random::<f64>();
    }
    m
}

/// DFedAvgM mixing: uniform average over the client's own parameters and
/// every cached neighbor copy with a positive graph weight.
pub fn dfedavgm_mix(state: &mut ClientState, graph_row: &[f64]) {
    let mut acc = state.model.params.clone();
    let mut count = 1.0;
    for (j, cached) in &state.neighbor_cache {
        if graph_row[*j] > 0.0 {
            acc.add_scaled(1.0, cached);
            count += 1.0;
        }
    }
    state.model.params = acc.scale(1.0 / count);
}

/// One optimizer step on the plain data loss, with whatever optimizer the
/// client carries. Shared by DFedAvgM local updates and virtual-client
/// pre-training.
pub fn data_loss_step(state: &mut ClientState, x: &Matrix, y: &[usize]) -> Result<(), FedError> {
    check_batch(x, y)?;
    let grad = grad_params(&state.model.params, x, Labels::Hard(y))?;
    sgd_momentum_step(&mut state.opt, &mut state.model.params, &grad)?;
    Ok(())
}

/// One DFedAvgM local step: SGD with momentum on the data loss only.
pub fn dfedavgm_local_step(
    state: &mut ClientState,
    x: &Matrix,
    y: &[usize],
) -> Result<(), FedError> {
    data_loss_step(state, x, y)
}

/// Pairwise model exchange: each side caches the other's current parameters.
/// The models themselves do not change.
pub fn exchange(
    a: &mut ClientState,
    b: &mut ClientState,
    graph: &CommGraph,
) -> Result<(), FedError> {
    if graph.weight(a.id, b.id) <= 0.0 {
        return Err(FedError::Protocol(format!(
            "exchange between unconnected clients {} and {}",
            a.id, b.id
        )));
    }
    a.neighbor_cache.insert(b.id, b.model.params.clone());
    b.neighbor_cache.insert(a.id, a.model.params.clone());
    Ok(())
}
