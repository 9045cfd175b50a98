//! Model classes: multinomial logistic regression and the ReLU MLP, with
//! prediction, accuracy, data loss, and parameter-space distance.

use crate::diffmath::{
    cross_entropy, forward_probs, DiffMathError, Labels, LayerShape, Matrix, ParamVec,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Mlp,
}

/// Architecture description. `hidden` is empty for logistic regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
}

impl ModelSpec {
    pub fn logreg(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logreg,
            input_dim,
            num_classes,
            hidden: Vec::new(),
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            num_classes,
            hidden,
        }
    }

    pub fn validate(&self) -> Result<(), DiffMathError> {
        if self.input_dim < 1 {
            return Err(DiffMathError::Shape("input_dim must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(DiffMathError::Shape("num_classes must be >= 2".into()));
        }
        if self.hidden.iter().any(|&h| h < 1) {
            return Err(DiffMathError::Shape("hidden widths must be >= 1".into()));
        }
        if self.kind == ModelKind::Logreg && !self.hidden.is_empty() {
            return Err(DiffMathError::Shape(
                "logreg spec must not declare hidden layers".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.num_classes);
        dims.windows(2)
            .map(|w| LayerShape {
                input: w[0],
                output: w[1],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|s| s.param_count()).sum()
    }
}

/// A model is a spec plus a concrete parameter vector. Immutable once
/// created; training replaces the whole value.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamVec,
}

/// Glorot-uniform initialization: weights ~ U(-a, a) with
/// a = sqrt(6 / (fan_in + fan_out)), biases zero. Deterministic per seed.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Model {
    let shapes = spec.layer_shapes();
    let mut params = ParamVec::zeros(shapes.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (l, shape) in shapes.iter().enumerate() {
        let a = (6.0 / (shape.input + shape.output) as f64).sqrt();
        for w in params.weights_mut(l) {
            *w = rng.random_range(-a..a);
        }
    }
    Model {
        spec: spec.clone(),
        params,
    }
}

/// Class probabilities for a batch; rows sum to 1.
pub fn predict(model: &Model, x: &Matrix) -> Result<Matrix, DiffMathError> {
    forward_probs(&model.params, x)
}

/// Row-wise argmax with ties broken by the lowest class index.
pub fn argmax_rows(probs: &Matrix) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of argmax predictions equal to the labels.
pub fn accuracy(model: &Model, x: &Matrix, y: &[usize]) -> Result<f64, DiffMathError> {
    Ok(correct_count(model, x, y)? as f64 / y.len() as f64)
}

/// Number of correct argmax predictions; the exact integer backing
/// [`accuracy`], used where exact equality matters (early stopping).
pub fn correct_count(model: &Model, x: &Matrix, y: &[usize]) -> Result<usize, DiffMathError> {
    if x.rows() == 0 {
        return Err(DiffMathError::Shape("accuracy over an empty batch".into()));
    }
    if x.rows() != y.len() {
        return Err(DiffMathError::Shape(format!(
            "{} samples vs {} labels",
            x.rows(),
            y.len()
        )));
    }
    let probs = predict(model, x)?;
    let pred = argmax_rows(&probs);
    Ok(pred.iter().zip(y).filter(|(p, y)| p == y).count())
}

/// Mean cross-entropy of the model's predictions.
pub fn data_loss(model: &Model, x: &Matrix, y: Labels) -> Result<f64, DiffMathError> {
    cross_entropy(&predict(model, x)?, y)
}

/// Euclidean norm of the flattened parameter difference.
pub fn param_l2_distance(a: &ParamVec, b: &ParamVec) -> Result<f64, DiffMathError> {
    if !a.same_shape(b) {
        return Err(DiffMathError::Shape(
            "parameter vectors have different shapes".into(),
        ));
    }
    Ok(a.sub(b).l2_norm())
}
