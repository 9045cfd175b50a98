//! Forward pass and reverse-mode gradients for the softmax-linear and
//! ReLU-MLP model classes.
//!
//! The architecture is implied by the parameter shapes: every layer is
//! affine, all but the last are followed by ReLU, and the last feeds a
//! row-wise softmax. Logistic regression is the single-layer case.

use super::loss::{softmax_unchecked, Labels};
use super::matrix::Matrix;
use super::params::ParamVec;
use super::DiffMathError;

/// Cached intermediates of one forward pass.
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l]` the post-ReLU output
    /// of hidden layer `l`.
    pub activations: Vec<Matrix>,
    /// Pre-activation of each layer, `pre_acts[l]` for layer `l` (0-based).
    pub pre_acts: Vec<Matrix>,
    /// Softmax of the final pre-activation.
    pub probs: Matrix,
}

fn check_input(params: &ParamVec, x: &Matrix) -> Result<(), DiffMathError> {
    let d = params.shapes()[0].input;
    if x.cols() != d {
        return Err(DiffMathError::Shape(format!(
            "input has {} features, model expects {}",
            x.cols(),
            d
        )));
    }
    Ok(())
}

/// Runs the forward pass, keeping every intermediate needed for backprop.
pub fn forward_cache(params: &ParamVec, x: &Matrix) -> Result<ForwardCache, DiffMathError> {
    check_input(params, x)?;
    let layers = params.shapes().len();
    let mut activations = vec![x.clone()];
    let mut pre_acts = Vec::with_capacity(layers);
    for l in 0..layers {
        let w = params.weight_matrix(l);
        let z = activations[l].matmul(&w).add_row_broadcast(params.bias(l));
        if l + 1 < layers {
            activations.push(z.relu());
        }
        pre_acts.push(z);
    }
    let probs = softmax_unchecked(&pre_acts[layers - 1]);
    Ok(ForwardCache {
        activations,
        pre_acts,
        probs,
    })
}

/// Forward pass returning class probabilities only.
pub fn forward_probs(params: &ParamVec, x: &Matrix) -> Result<Matrix, DiffMathError> {
    Ok(forward_cache(params, x)?.probs)
}

/// Backpropagates an upstream gradient on the output pre-activation through
/// the cached forward pass, returning parameter gradients and the input
/// gradient.
pub fn backprop(params: &ParamVec, cache: &ForwardCache, dz_out: Matrix) -> (ParamVec, Matrix) {
    let layers = params.shapes().len();
    let mut grads = ParamVec::zeros_like(params);
    let mut dz = dz_out;
    for l in (0..layers).rev() {
        let dw = cache.activations[l].matmul_at(&dz);
        grads.weights_mut(l).copy_from_slice(dw.as_slice());
        grads.bias_mut(l).copy_from_slice(&dz.col_sums());
        let w = params.weight_matrix(l);
        let da = dz.matmul_bt(&w);
        if l == 0 {
            return (grads, da);
        }
        dz = da.hadamard(&cache.pre_acts[l - 1].relu_mask());
    }
    unreachable!("parameter vector with zero layers")
}

/// dZ for mean cross-entropy: (P - Y) / n with Y one-hot or soft.
pub fn ce_output_delta(probs: &Matrix, labels: Labels) -> Result<Matrix, DiffMathError> {
    let n = probs.rows();
    if labels.len() != n {
        return Err(DiffMathError::Shape(format!(
            "{} samples vs {} labels",
            n,
            labels.len()
        )));
    }
    let c = probs.cols();
    let inv_n = 1.0 / n as f64;
    let mut dz = probs.scale(inv_n);
    match labels {
        Labels::Hard(y) => {
            for (i, &yi) in y.iter().enumerate() {
                if yi >= c {
                    return Err(DiffMathError::LabelOutOfRange {
                        label: yi,
                        classes: c,
                    });
                }
                dz[(i, yi)] -= inv_n;
            }
        }
        Labels::Soft(y) => {
            if y.cols() != c {
                return Err(DiffMathError::Shape(
                    "soft label class count mismatch".into(),
                ));
            }
            for i in 0..n {
                for j in 0..c {
                    dz[(i, j)] -= y[(i, j)] * inv_n;
                }
            }
        }
    }
    Ok(dz)
}

/// Gradient of the mean cross-entropy with respect to the parameters.
pub fn grad_params(
    params: &ParamVec,
    x: &Matrix,
    labels: Labels,
) -> Result<ParamVec, DiffMathError> {
    let cache = forward_cache(params, x)?;
    let dz = ce_output_delta(&cache.probs, labels)?;
    Ok(backprop(params, &cache, dz).0)
}

/// Gradient of the mean cross-entropy with respect to the inputs.
pub fn grad_inputs(params: &ParamVec, x: &Matrix, labels: Labels) -> Result<Matrix, DiffMathError> {
    let cache = forward_cache(params, x)?;
    let dz = ce_output_delta(&cache.probs, labels)?;
    Ok(backprop(params, &cache, dz).1)
}

/// Converts a gradient on softmax outputs into a gradient on the logits:
/// dZ = P .* (dP - rowsum(dP .* P)).
pub fn softmax_backward(probs: &Matrix, dprobs: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = dprobs.row(r);
        let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (j, v) in dz.row_mut(r).iter_mut().enumerate() {
            *v = p[j] * (dp[j] - inner);
        }
    }
    dz
}

/// Gradient of a loss given its gradient on the output probabilities,
/// with respect to both parameters and inputs.
pub fn grad_from_dprobs(
    params: &ParamVec,
    cache: &ForwardCache,
    dprobs: &Matrix,
) -> (ParamVec, Matrix) {
    let dz = softmax_backward(&cache.probs, dprobs);
    backprop(params, cache, dz)
}
