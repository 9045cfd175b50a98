//! Gradients of gradient-matching objectives with respect to synthetic
//! inputs and label logits.
//!
//! The synthetic parameter gradient grad_params(theta, X', softmax(Y'犀logits))
//! is itself a differentiable function of (X', Y'_logits) once the backprop
//! recurrence is written out as forward operations. `grad_of_gradmatch`
//! builds that unrolled computation on the [`Tape`] and runs one reverse
//! sweep, which yields the second-order quantity the inversion attack needs.

use super::grad::{forward_probs, grad_params};
use super::loss::{softmax, Labels};
use super::matrix::Matrix;
use super::params::ParamVec;
use super::tape::{NodeId, Tape};
use super::DiffMathError;

/// Distance between the synthetic and target parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradDistance {
    /// Squared L2 norm of the flattened difference.
    SquaredL2,
    /// One minus the cosine similarity of the flattened vectors.
    Cosine,
}

/// Guard on the cosine denominator.
pub const COSINE_CLAMP: f64 = 1e-12;

pub struct GradMatchResult {
    /// Value of the distance term.
    pub distance: f64,
    /// d distance / d X'
    pub grad_x: Matrix,
    /// d distance / d Y'_logits
    pub grad_y_logits: Matrix,
}

/// Builds the unrolled computation of grad_params on the tape and returns
/// the node ids of each layer's weight- and bias-gradient blocks.
fn build_grad_nodes(
    tape: &mut Tape,
    params: &ParamVec,
    x: NodeId,
    soft_labels: NodeId,
    n: usize,
) -> (Vec<(NodeId, NodeId)>, NodeId) {
    let layers = params.shapes().len();

    // Forward chain.
    let mut acts = vec![x];
    let mut pre_acts = Vec::with_capacity(layers);
    for l in 0..layers {
        let z = tape.affine(acts[l], params.weight_matrix(l), params.bias(l));
        pre_acts.push(z);
        if l + 1 < layers {
            acts.push(tape.relu(z));
        }
    }
    let probs = tape.softmax(pre_acts[layers - 1]);

    // Unrolled backprop producing the parameter-gradient blocks.
    let diff = tape.sub(probs, soft_labels);
    let mut dz = tape.scale(diff, 1.0 / n as f64);
    let mut blocks = vec![(0usize, 0usize); layers];
    for l in (0..layers).rev() {
        let gw = tape.matmul_at(acts[l], dz);
        let gb = tape.col_sum(dz);
        blocks[l] = (gw, gb);
        if l > 0 {
            let da = tape.matmul_bt_const(dz, params.weight_matrix(l));
            let mask = tape.value(pre_acts[l - 1]).relu_mask();
            dz = tape.mul_mask(da, mask);
        }
    }
    (blocks, probs)
}

fn target_blocks(target: &ParamVec) -> Vec<(Matrix, Matrix)> {
    (0..target.shapes().len())
        .map(|l| {
            let s = target.shapes()[l];
            (
                Matrix::from_vec(s.input, s.output, target.weights(l).to_vec()),
                Matrix::from_vec(1, s.output, target.bias(l).to_vec()),
            )
        })
        .collect()
}

/// Gradient of the gradient-matching distance with respect to the synthetic
/// inputs and the free label logits.
pub fn grad_of_gradmatch(
    params: &ParamVec,
    x_syn: &Matrix,
    y_logits: &Matrix,
    target_grad: &ParamVec,
    distance: GradDistance,
) -> Result<GradMatchResult, DiffMathError> {
    if !params.same_shape(target_grad) {
        return Err(DiffMathError::Shape(
            "target gradient shape differs from parameter shape".into(),
        ));
    }
    if x_syn.cols() != params.shapes()[0].input {
        return Err(DiffMathError::Shape(format!(
            "synthetic inputs have {} features, model expects {}",
            x_syn.cols(),
            params.shapes()[0].input
        )));
    }
    let classes = params.shapes().last().unwrap().output;
    if y_logits.rows() != x_syn.rows() || y_logits.cols() != classes {
        return Err(DiffMathError::Shape(format!(
            "label logits are {}x{}, expected {}x{}",
            y_logits.rows(),
            y_logits.cols(),
            x_syn.rows(),
            classes
        )));
    }
    if distance == GradDistance::Cosine && target_grad.l2_norm() == 0.0 {
        return Err(DiffMathError::NumericDomain(
            "cosine distance against a zero target gradient".into(),
        ));
    }

    let n = x_syn.rows();
    let mut tape = Tape::new();
    let x = tape.leaf(x_syn.clone());
    let y = tape.leaf(y_logits.clone());
    let soft = tape.softmax(y);
    let (blocks, _probs) = build_grad_nodes(&mut tape, params, x, soft, n);
    let targets = target_blocks(target_grad);

    let out = match distance {
        GradDistance::SquaredL2 => {
            let mut acc: Option<NodeId> = None;
            for ((gw, gb), (tw, tb)) in blocks.iter().zip(&targets) {
                let dw = tape.sum_sq_diff_const(*gw, tw.clone());
                let db = tape.sum_sq_diff_const(*gb, tb.clone());
                let term = tape.s_add(dw, db);
                acc = Some(match acc {
                    Some(a) => tape.s_add(a, term),
                    None => term,
                });
            }
            acc.expect("at least one layer")
        }
        GradDistance::Cosine => {
            let mut dot_acc: Option<NodeId> = None;
            let mut sq_acc: Option<NodeId> = None;
            for ((gw, gb), (tw, tb)) in blocks.iter().zip(&targets) {
                let dw = tape.dot_const(*gw, tw.clone());
                let db = tape.dot_const(*gb, tb.clone());
                let d = tape.s_add(dw, db);
                dot_acc = Some(match dot_acc {
                    Some(a) => tape.s_add(a, d),
                    None => d,
                });
                let qw = tape.sum_sq(*gw);
                let qb = tape.sum_sq(*gb);
                let q = tape.s_add(qw, qb);
                sq_acc = Some(match sq_acc {
                    Some(a) => tape.s_add(a, q),
                    None => q,
                });
            }
            let dot = dot_acc.expect("at least one layer");
            let sq = sq_acc.expect("at least one layer");
            let sq_clamped = tape.s_max_const(sq, COSINE_CLAMP * COSINE_CLAMP);
            let norm = tape.s_sqrt(sq_clamped);
            let scaled = tape.scale(norm, target_grad.l2_norm());
            let denom = tape.s_max_const(scaled, COSINE_CLAMP);
            let ratio = tape.s_div(dot, denom);
            tape.one_minus(ratio)
        }
    };

    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(DiffMathError::NumericDomain(
            "non-finite gradient-matching distance".into(),
        ));
    }
    let grads = tape.backward(out);
    let grad_x = grads[x].clone();
    let grad_y = grads[y].clone();
    if !grad_x.is_finite() || !grad_y.is_finite() {
        return Err(DiffMathError::NumericDomain(
            "non-finite gradient-matching gradient".into(),
        ));
    }
    Ok(GradMatchResult {
        distance: value,
        grad_x,
        grad_y_logits: grad_y,
    })
}

/// Distance value computed through the ordinary (non-tape) gradient path.
/// Used as the finite-difference oracle target and as a cross-check that the
/// tape forward agrees with the first-order implementation.
pub fn gradmatch_value(
    params: &ParamVec,
    x_syn: &Matrix,
    y_logits: &Matrix,
    target_grad: &ParamVec,
    distance: GradDistance,
) -> Result<f64, DiffMathError> {
    let soft = softmax(y_logits)?;
    let g = grad_params(params, x_syn, Labels::Soft(&soft))?;
    Ok(match distance {
        GradDistance::SquaredL2 => {
            let d = g.sub(target_grad);
            d.as_slice().iter().map(|v| v * v).sum()
        }
        GradDistance::Cosine => {
            let dot = g.dot(target_grad);
            let denom = (g.l2_norm().max(COSINE_CLAMP) * target_grad.l2_norm()).max(COSINE_CLAMP);
            1.0 - dot / denom
        }
    })
}

/// Joint label-matching loss: mean over the batch of the squared L2
/// difference between model outputs and soft labels, with its gradients.
pub struct LabelMatchResult {
    pub loss: f64,
    pub grad_x: Matrix,
    pub grad_y_logits: Matrix,
}

pub fn grad_of_label_match(
    params: &ParamVec,
    x_syn: &Matrix,
    y_logits: &Matrix,
) -> Result<LabelMatchResult, DiffMathError> {
    let cache = super::grad::forward_cache(params, x_syn)?;
    let soft = softmax(y_logits)?;
    if soft.rows() != cache.probs.rows() || soft.cols() != cache.probs.cols() {
        return Err(DiffMathError::Shape("label logits shape mismatch".into()));
    }
    let n = x_syn.rows() as f64;
    let diff = cache.probs.sub(&soft);
    let loss = diff.sum_sq() / n;
    let dprobs = diff.scale(2.0 / n);
    let (_, grad_x) = super::grad::grad_from_dprobs(params, &cache, &dprobs);
    // Gradient on the label logits flows through softmax with the negated
    // upstream gradient.
    let grad_y = super::grad::softmax_backward(&soft, &dprobs.scale(-1.0));
    Ok(LabelMatchResult {
        loss,
        grad_x,
        grad_y_logits: grad_y,
    })
}

/// Label-loss value through the plain forward path (oracle use).
pub fn label_match_value(
    params: &ParamVec,
    x_syn: &Matrix,
    y_logits: &Matrix,
) -> Result<f64, DiffMathError> {
    let probs = forward_probs(params, x_syn)?;
    let soft = softmax(y_logits)?;
    Ok(probs.sub(&soft).sum_sq() / x_syn.rows() as f64)
}
