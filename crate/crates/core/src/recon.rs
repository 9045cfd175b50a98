//! Client reconstruction: the random-data baseline, model inversion, and
//! gradient inversion (L2 and cosine, with joint label optimization), plus
//! pseudo-gradient extraction and virtual-client assembly.
//!
//! Attacks only ever see the dead client's broadcast parameter snapshots;
//! the real silo is revoked by the engine before any of this code runs.

use crate::datahub::{Dataset, Silo, SiloProvenance};
use crate::diffmath::{
    adam_step, grad_inputs, grad_of_gradmatch, grad_of_label_match, gradmatch_value,
    label_match_value, DiffMathError, GradDistance, Labels, Matrix, OptState, ParamVec,
};
use crate::fedalgos::{AlgoKind, ClientState, FedError};
use crate::models::{argmax_rows, data_loss, Model, ModelSpec};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ReconError {
    #[error("reconstruction configuration error: {0}")]
    Config(String),
    #[error("degenerate gradient target: {0}")]
    DegenerateTarget(String),
    #[error("attack diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Math(#[from] DiffMathError),
    #[error(transparent)]
    Fed(#[from] FedError),
}

/// Distribution used to initialize synthetic inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    /// U[0, 1) per entry.
    Uniform,
    /// N(0.5, 0.1) clamped to [0, 1].
    Normal,
}

/// Which gradient-matching distance variants to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceChoice {
    L2,
    Cosine,
    /// Run both and keep the variant with the lower final attack loss.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiParams {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiParams {
    pub lr: f64,
    pub epochs: usize,
    pub distance: DistanceChoice,
    pub joint_labels: bool,
    pub label_weight: f64,
}

/// All reconstruction knobs, with experiment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub n_points: usize,
    pub batch_size: usize,
    pub tv_weight: f64,
    pub domain_weight: f64,
    pub init: InitKind,
    pub mi: MiParams,
    pub gi: GiParams,
    /// Overrides the algorithm's nominal learning rate when scaling the
    /// snapshot difference into a pseudo-gradient.
    pub pseudo_grad_lr: Option<f64>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            n_points: 50,
            batch_size: 16,
            tv_weight: 0.01,
            domain_weight: 0.1,
            init: InitKind::Uniform,
            mi: MiParams {
                lr: 0.01,
                weight_decay: 0.01,
                epochs: 1000,
            },
            gi: GiParams {
                lr: 0.05,
                epochs: 2000,
                distance: DistanceChoice::Both,
                joint_labels: true,
                label_weight: 1.0,
            },
            pseudo_grad_lr: None,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self, num_classes: usize) -> Result<(), ReconError> {
        if self.n_points < num_classes {
            return Err(ReconError::Config(format!(
                "{} synthetic points cannot cover {num_classes} classes",
                self.n_points
            )));
        }
        if self.batch_size == 0 || self.mi.epochs == 0 || self.gi.epochs == 0 {
            return Err(ReconError::Config(
                "batch size and epoch counts must be >= 1".into(),
            ));
        }
        if self.tv_weight < 0.0
            || self.domain_weight < 0.0
            || self.gi.label_weight < 0.0
            || self.mi.weight_decay < 0.0
        {
            return Err(ReconError::Config("weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Where a synthetic silo came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconOrigin {
    Random,
    ModelInversion,
    GradientInversion(GradDistance),
}

impl ReconOrigin {
    pub fn name(&self) -> &'static str {
        match self {
            ReconOrigin::Random => "random",
            ReconOrigin::ModelInversion => "model-inversion",
            ReconOrigin::GradientInversion(GradDistance::SquaredL2) => "gradient-inversion-l2",
            ReconOrigin::GradientInversion(GradDistance::Cosine) => "gradient-inversion-cosine",
        }
    }
}

/// Reconstructed stand-in data for a lost client.
#[derive(Debug, Clone)]
pub struct SyntheticSilo {
    /// Synthetic inputs, every entry in [0, 1].
    pub x: Matrix,
    /// Hard class labels (argmax of soft labels for joint gradient inversion).
    pub labels_hard: Vec<usize>,
    /// Soft labels when labels were optimized jointly.
    pub labels_soft: Option<Matrix>,
    pub num_classes: usize,
    pub grid_shape: Option<(usize, usize)>,
    pub origin: ReconOrigin,
    /// Full attack objective per optimization epoch.
    pub trace: Vec<f64>,
}

impl SyntheticSilo {
    pub fn len(&self) -> usize {
        self.labels_hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels_hard.is_empty()
    }
}

/// Synthetic inputs drawn from the configured initialization distribution,
/// clamped to the valid domain.
pub fn init_inputs(kind: InitKind, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    match kind {
        InitKind::Uniform => {
            for v in m.as_mut_slice() {
                *v = rng.random::<f64>();
            }
        }
        InitKind::Normal => {
            let normal = Normal::<f64>::new(0.5, 0.1).unwrap();
            for v in m.as_mut_slice() {
                *v = normal.sample(rng).clamp(0.0, 1.0);
            }
        }
    }
    m
}

/// The random baseline: uniform inputs, uniform labels.
pub fn random_data(
    d: usize,
    num_classes: usize,
    n: usize,
    grid_shape: Option<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> SyntheticSilo {
    let x = init_inputs(InitKind::Uniform, n, d, rng);
    let labels_hard = (0..n).map(|_| rng.random_range(0..num_classes)).collect();
    SyntheticSilo {
        x,
        labels_hard,
        labels_soft: None,
        num_classes,
        grid_shape,
        origin: ReconOrigin::Random,
        trace: Vec::new(),
    }
}

/// Domain prior: sum over entries of overshoot above 1 plus undershoot
/// below 0.
pub fn domain_prior(x: &Matrix) -> f64 {
    x.as_slice()
        .iter()
        .map(|&v| (v - 1.0).max(0.0) + (-v).max(0.0))
        .sum()
}

/// Subgradient of [`domain_prior`].
pub fn domain_prior_grad(x: &Matrix) -> Matrix {
    x.map(|v| {
        if v > 1.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Anisotropic total variation on a pixel grid, averaged over the batch.
pub fn total_variation(x: &Matrix, grid: (usize, usize)) -> Result<f64, ReconError> {
    let (gr, gc) = grid;
    if gr * gc != x.cols() {
        return Err(ReconError::Math(DiffMathError::Shape(format!(
            "grid {gr}x{gc} does not match {} features",
            x.cols()
        ))));
    }
    let mut total = 0.0;
    for s in 0..x.rows() {
        let row = x.row(s);
        for r in 0..gr {
            for c in 0..gc {
                if c + 1 < gc {
                    total += (row[r * gc + c + 1] - row[r * gc + c]).abs();
                }
                if r + 1 < gr {
                    total += (row[(r + 1) * gc + c] - row[r * gc + c]).abs();
                }
            }
        }
    }
    Ok(total / x.rows() as f64)
}

/// Sign subgradient of [`total_variation`].
pub fn total_variation_grad(x: &Matrix, grid: (usize, usize)) -> Result<Matrix, ReconError> {
    let (gr, gc) = grid;
    if gr * gc != x.cols() {
        return Err(ReconError::Math(DiffMathError::Shape(format!(
            "grid {gr}x{gc} does not match {} features",
            x.cols()
        ))));
    }
    let inv_n = 1.0 / x.rows() as f64;
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for s in 0..x.rows() {
        let row = x.row(s);
        for r in 0..gr {
            for c in 0..gc {
                if c + 1 < gc {
                    let sign = (row[r * gc + c + 1] - row[r * gc + c]).signum_or_zero();
                    g[(s, r * gc + c + 1)] += sign * inv_n;
                    g[(s, r * gc + c)] -= sign * inv_n;
                }
                if r + 1 < gr {
                    let sign = (row[(r + 1) * gc + c] - row[r * gc + c]).signum_or_zero();
                    g[(s, (r + 1) * gc + c)] += sign * inv_n;
                    g[(s, r * gc + c)] -= sign * inv_n;
                }
            }
        }
    }
    Ok(g)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Pseudo-gradient extracted from two consecutive broadcast snapshots:
/// (prev - last) / lr. With a single plain-SGD step between the snapshots
/// this is exactly the step's gradient; in general it is the ENB-blurred
/// aggregate update direction.
pub struct PseudoGradient {
    pub grad: ParamVec,
    /// True when the snapshots were identical.
    pub degenerate: bool,
}

pub fn pseudo_gradient(
    snap_prev: &ParamVec,
    snap_last: &ParamVec,
    lr_nominal: f64,
) -> Result<PseudoGradient, ReconError> {
    if !snap_prev.same_shape(snap_last) {
        return Err(ReconError::Math(DiffMathError::Shape(
            "snapshot shapes differ".into(),
        )));
    }
    if lr_nominal <= 0.0 {
        return Err(ReconError::Config(
            "pseudo-gradient learning rate must be positive".into(),
        ));
    }
    let grad = snap_prev.sub(snap_last).scale(1.0 / lr_nominal);
    let degenerate = grad.as_slice().iter().all(|&v| v == 0.0);
    Ok(PseudoGradient { grad, degenerate })
}

fn clamp_unit(x: &mut Matrix) {
    for v in x.as_mut_slice() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Class-balanced hard labels: ceil(n/C) for the lowest class ids carrying
/// the remainder, floor(n/C) for the rest.
pub fn class_balanced_labels(n: usize, num_classes: usize) -> Vec<usize> {
    let base = n / num_classes;
    let rem = n % num_classes;
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        let count = base + usize::from(c < rem);
        labels.extend(std::iter::repeat_n(c, count));
    }
    labels
}

fn scatter_rows(full: &mut Matrix, rows: &[usize], part: &Matrix) {
    for (k, &r) in rows.iter().enumerate() {
        full.row_mut(r).copy_from_slice(part.row(k));
    }
}

/// Model inversion: synthesize inputs that a frozen model classifies with
/// low loss under fixed class-balanced labels, with total-variation and
/// domain priors, clamping to the unit interval after every step.
pub fn model_inversion(
    model: &Model,
    cfg: &ReconConfig,
    grid_shape: Option<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticSilo, ReconError> {
    let num_classes = model.spec.num_classes;
    cfg.validate(num_classes)?;
    let n = cfg.n_points;
    let d = model.spec.input_dim;
    let labels = class_balanced_labels(n, num_classes);
    let mut x = init_inputs(cfg.init, n, d, rng);
    clamp_unit(&mut x);

    let mut opt = OptState::adam(cfg.mi.lr, cfg.mi.weight_decay, n * d);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.mi.epochs);

    for epoch in 0..cfg.mi.epochs {
        // Shuffling only matters when the epoch is split into mini-batches.
        if cfg.batch_size < n {
            order.shuffle(rng);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut gb = grad_inputs(&model.params, &xb, Labels::Hard(&yb))?;
            if cfg.tv_weight > 0.0 {
                if let Some(grid) = grid_shape {
                    let tv = total_variation_grad(&xb, grid)?;
                    for (g, t) in gb.as_mut_slice().iter_mut().zip(tv.as_slice()) {
                        *g += cfg.tv_weight * t;
                    }
                }
            }
            if cfg.domain_weight > 0.0 {
                let dp = domain_prior_grad(&xb);
                for (g, t) in gb.as_mut_slice().iter_mut().zip(dp.as_slice()) {
                    *g += cfg.domain_weight * t;
                }
            }
            let mut full_grad = Matrix::zeros(n, d);
            scatter_rows(&mut full_grad, chunk, &gb);
            adam_step(&mut opt, x.as_mut_slice(), full_grad.as_slice())?;
            clamp_unit(&mut x);
        }
        let objective = attack_objective_mi(model, &x, &labels, cfg, grid_shape)?;
        if !objective.is_finite() {
            return Err(ReconError::NonFinite(format!(
                "model inversion objective at epoch {epoch}"
            )));
        }
        trace.push(objective);
    }

    Ok(SyntheticSilo {
        x,
        labels_hard: labels,
        labels_soft: None,
        num_classes,
        grid_shape,
        origin: ReconOrigin::ModelInversion,
        trace,
    })
}

fn attack_objective_mi(
    model: &Model,
    x: &Matrix,
    labels: &[usize],
    cfg: &ReconConfig,
    grid_shape: Option<(usize, usize)>,
) -> Result<f64, ReconError> {
    let mut obj = data_loss(model, x, Labels::Hard(labels))?;
    if cfg.tv_weight > 0.0 {
        if let Some(grid) = grid_shape {
            obj += cfg.tv_weight * total_variation(x, grid)?;
        }
    }
    obj += cfg.domain_weight * domain_prior(x);
    Ok(obj)
}

/// Gradient inversion with one distance variant: optimize synthetic inputs
/// (and, when enabled, label logits) so the induced parameter gradient
/// matches the target, with priors and the joint label-matching term.
pub fn gradient_inversion(
    model: &Model,
    target: &ParamVec,
    cfg: &ReconConfig,
    distance: GradDistance,
    grid_shape: Option<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticSilo, ReconError> {
    let num_classes = model.spec.num_classes;
    cfg.validate(num_classes)?;
    if distance == GradDistance::Cosine && target.l2_norm() == 0.0 {
        return Err(ReconError::Config(
            "cosine gradient inversion needs a nonzero target".into(),
        ));
    }
    let n = cfg.n_points;
    let d = model.spec.input_dim;
    let mut x = init_inputs(cfg.init, n, d, rng);
    clamp_unit(&mut x);

    // Label logits: free when jointly optimized, otherwise pinned to sharp
    // one-hot logits of random labels.
    let mut y_logits = if cfg.gi.joint_labels {
        let mut m = Matrix::zeros(n, num_classes);
        for v in m.as_mut_slice() {
            *v = rng.random::<f64>();
        }
        m
    } else {
        let mut m = Matrix::zeros(n, num_classes);
        for r in 0..n {
            let c = rng.random_range(0..num_classes);
            m[(r, c)] = 50.0;
        }
        m
    };

    let mut opt_x = OptState::adam(cfg.gi.lr, 0.0, n * d);
    let mut opt_y = OptState::adam(cfg.gi.lr, 0.0, n * num_classes);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.gi.epochs);

    for epoch in 0..cfg.gi.epochs {
        if cfg.batch_size < n {
            order.shuffle(rng);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(chunk);
            let yb = y_logits.select_rows(chunk);
            let matched = grad_of_gradmatch(&model.params, &xb, &yb, target, distance)?;
            let mut gx = matched.grad_x;
            let mut gy = matched.grad_y_logits;

            if cfg.gi.joint_labels && cfg.gi.label_weight > 0.0 {
                let lm = grad_of_label_match(&model.params, &xb, &yb)?;
                for (g, t) in gx.as_mut_slice().iter_mut().zip(lm.grad_x.as_slice()) {
                    *g += cfg.gi.label_weight * t;
                }
                for (g, t) in gy
                    .as_mut_slice()
                    .iter_mut()
                    .zip(lm.grad_y_logits.as_slice())
                {
                    *g += cfg.gi.label_weight * t;
                }
            }
            if cfg.tv_weight > 0.0 {
                if let Some(grid) = grid_shape {
                    let tv = total_variation_grad(&xb, grid)?;
                    for (g, t) in gx.as_mut_slice().iter_mut().zip(tv.as_slice()) {
                        *g += cfg.tv_weight * t;
                    }
                }
            }
            if cfg.domain_weight > 0.0 {
                let dp = domain_prior_grad(&xb);
                for (g, t) in gx.as_mut_slice().iter_mut().zip(dp.as_slice()) {
                    *g += cfg.domain_weight * t;
                }
            }

            let mut full_gx = Matrix::zeros(n, d);
            scatter_rows(&mut full_gx, chunk, &gx);
            adam_step(&mut opt_x, x.as_mut_slice(), full_gx.as_slice())?;
            clamp_unit(&mut x);

            if cfg.gi.joint_labels {
                let mut full_gy = Matrix::zeros(n, num_classes);
                scatter_rows(&mut full_gy, chunk, &gy);
                adam_step(&mut opt_y, y_logits.as_mut_slice(), full_gy.as_slice())?;
            }
        }
        let objective =
            attack_objective_gi(model, &x, &y_logits, target, cfg, distance, grid_shape)?;
        if !objective.is_finite() {
            return Err(ReconError::NonFinite(format!(
                "gradient inversion objective at epoch {epoch}"
            )));
        }
        trace.push(objective);
    }

    let soft = crate::diffmath::softmax(&y_logits)?;
    let labels_hard = argmax_rows(&soft);
    Ok(SyntheticSilo {
        x,
        labels_hard,
        labels_soft: cfg.gi.joint_labels.then_some(soft),
        num_classes,
        grid_shape,
        origin: ReconOrigin::GradientInversion(distance),
        trace,
    })
}

fn attack_objective_gi(
    model: &Model,
    x: &Matrix,
    y_logits: &Matrix,
    target: &ParamVec,
    cfg: &ReconConfig,
    distance: GradDistance,
    grid_shape: Option<(usize, usize)>,
) -> Result<f64, ReconError> {
    let mut obj = gradmatch_value(&model.params, x, y_logits, target, distance)?;
    if cfg.gi.joint_labels && cfg.gi.label_weight > 0.0 {
        obj += cfg.gi.label_weight * label_match_value(&model.params, x, y_logits)?;
    }
    if cfg.tv_weight > 0.0 {
        if let Some(grid) = grid_shape {
            obj += cfg.tv_weight * total_variation(x, grid)?;
        }
    }
    obj += cfg.domain_weight * domain_prior(x);
    Ok(obj)
}

/// Runs the configured gradient-inversion variant(s); with
/// [`DistanceChoice::Both`] the variant with the lower final attack loss
/// wins. Both variants start from identical initial states.
pub fn run_gradient_inversion(
    model: &Model,
    target: &ParamVec,
    cfg: &ReconConfig,
    grid_shape: Option<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticSilo, ReconError> {
    match cfg.gi.distance {
        DistanceChoice::L2 => {
            gradient_inversion(model, target, cfg, GradDistance::SquaredL2, grid_shape, rng)
        }
        DistanceChoice::Cosine => {
            gradient_inversion(model, target, cfg, GradDistance::Cosine, grid_shape, rng)
        }
        DistanceChoice::Both => {
            let mut rng_l2 = rng.clone();
            let l2 = gradient_inversion(
                model,
                target,
                cfg,
                GradDistance::SquaredL2,
                grid_shape,
                &mut rng_l2,
            )?;
            let cos =
                gradient_inversion(model, target, cfg, GradDistance::Cosine, grid_shape, rng)?;
            let l2_final = l2.trace.last().copied().unwrap_or(f64::INFINITY);
            let cos_final = cos.trace.last().copied().unwrap_or(f64::INFINITY);
            Ok(if l2_final <= cos_final { l2 } else { cos })
        }
    }
}

/// Turns a synthetic silo into a real dataset (hard labels).
pub fn synthetic_dataset(silo: &SyntheticSilo) -> Dataset {
    Dataset {
        x: silo.x.clone(),
        y: silo.labels_hard.clone(),
        num_classes: silo.num_classes,
        label_map: (0..silo.num_classes as i64).collect(),
        feature_names: None,
        grid_shape: silo.grid_shape,
    }
}

/// Number of pre-training epochs for the random baseline before it rejoins.
pub const RANDOM_PRETRAIN_EPOCHS: usize = 10;

/// Instantiates a virtual client at the dead client's graph position:
/// parameters from the last broadcast snapshot, the synthetic silo with an
/// 80-20 split, and a fresh optimizer. The random baseline is pre-trained
/// for [`RANDOM_PRETRAIN_EPOCHS`] epochs on its own data before rejoining.
pub fn make_virtual_client(
    id: usize,
    theta_last: ParamVec,
    spec: &ModelSpec,
    silo: &SyntheticSilo,
    algo: &AlgoKind,
    batch_size: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<ClientState, ReconError> {
    if silo.is_empty() {
        return Err(ReconError::Config("empty synthetic silo".into()));
    }
    let ds = synthetic_dataset(silo);
    let n = ds.len();
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let n_train = (0.8 * n as f64).round() as usize;
    let (train_idx, val_idx) = indices.split_at(n_train);
    let data_silo = Silo {
        owner: id,
        train: ds.subset(train_idx),
        val: ds.subset(val_idx),
        provenance: SiloProvenance::Iid,
    };
    let model = Model {
        spec: spec.clone(),
        params: theta_last,
    };
    let mut state = ClientState::new(id, model, data_silo, algo);
    state.is_virtual = true;

    if silo.origin == ReconOrigin::Random {
        let train = &state.silo()?.train.clone();
        for _ in 0..RANDOM_PRETRAIN_EPOCHS {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(rng);
            let chunk_len = batch_size.unwrap_or(train.len()).min(train.len());
            for chunk in order.chunks(chunk_len) {
                let xb = train.x.select_rows(chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| train.y[i]).collect();
                crate::fedalgos::data_loss_step(&mut state, &xb, &yb)?;
            }
        }
    }
    Ok(state)
}
