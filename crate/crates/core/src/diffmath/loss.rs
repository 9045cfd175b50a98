//! Softmax and cross-entropy, with the numerical guards the rest of the
//! crate relies on: max-subtracted softmax and a 1e-12 clamp on log inputs.

use super::matrix::Matrix;
use super::DiffMathError;

/// Floor applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// Classification targets: hard class indices or a row-stochastic soft matrix.
#[derive(Debug, Clone, Copy)]
pub enum Labels<'a> {
    Hard(&'a [usize]),
    Soft(&'a Matrix),
}

impl Labels<'_> {
    pub fn len(&self) -> usize {
        match self {
            Labels::Hard(y) => y.len(),
            Labels::Soft(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax(logits: &Matrix) -> Result<Matrix, DiffMathError> {
    if !logits.is_finite() {
        return Err(DiffMathError::NumericDomain(
            "softmax input contains non-finite entries".into(),
        ));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy of predicted probabilities against targets.
pub fn cross_entropy(probs: &Matrix, labels: Labels) -> Result<f64, DiffMathError> {
    let n = probs.rows();
    if labels.len() != n {
        return Err(DiffMathError::Shape(format!(
            "cross_entropy: {} probability rows vs {} labels",
            n,
            labels.len()
        )));
    }
    if n == 0 {
        return Err(DiffMathError::Shape("cross_entropy on empty batch".into()));
    }
    let c = probs.cols();
    let mut total = 0.0;
    match labels {
        Labels::Hard(y) => {
            for (i, &yi) in y.iter().enumerate() {
                if yi >= c {
                    return Err(DiffMathError::LabelOutOfRange {
                        label: yi,
                        classes: c,
                    });
                }
                total -= probs[(i, yi)].max(LOG_CLAMP).ln();
            }
        }
        Labels::Soft(y) => {
            if y.cols() != c {
                return Err(DiffMathError::Shape(format!(
                    "cross_entropy: soft labels have {} classes, probs {}",
                    y.cols(),
                    c
                )));
            }
            for i in 0..n {
                for j in 0..c {
                    total -= y[(i, j)] * probs[(i, j)].max(LOG_CLAMP).ln();
                }
            }
        }
    }
    Ok(total / n as f64)
}
