//! SGD-with-momentum and Adam optimizer state and update rules.
//!
//! Both steps are pure functions of (state, input): identical inputs produce
//! bitwise-identical outputs and state.

use super::params::ParamVec;
use super::DiffMathError;

#[derive(Debug, Clone, PartialEq)]
pub enum OptKind {
    SgdMomentum {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

/// Optimizer state over a flat target vector. Slot buffers are sized to the
/// optimized vector: one velocity slot for SGD-momentum, two moment slots for
/// Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub kind: OptKind,
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    slot1: Vec<f64>,
    slot2: Vec<f64>,
}

impl OptState {
    pub fn sgd_momentum(lr: f64, momentum: f64, len: usize) -> Self {
        OptState {
            kind: OptKind::SgdMomentum { momentum },
            step: 0,
            lr,
            weight_decay: 0.0,
            slot1: vec![0.0; len],
            slot2: Vec::new(),
        }
    }

    pub fn adam(lr: f64, weight_decay: f64, len: usize) -> Self {
        OptState {
            kind: OptKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            step: 0,
            lr,
            weight_decay,
            slot1: vec![0.0; len],
            slot2: vec![0.0; len],
        }
    }

    pub fn target_len(&self) -> usize {
        self.slot1.len()
    }
}

/// One SGD-momentum update over a flat slice: v <- mu*v + g; x <- x - lr*v.
pub fn sgd_momentum_step_flat(
    state: &mut OptState,
    target: &mut [f64],
    grad: &[f64],
) -> Result<(), DiffMathError> {
    let momentum = match state.kind {
        OptKind::SgdMomentum { momentum } => momentum,
        _ => {
            return Err(DiffMathError::Capability(
                "sgd_momentum_step on a non-SGD optimizer state".into(),
            ))
        }
    };
    if target.len() != grad.len() || target.len() != state.slot1.len() {
        return Err(DiffMathError::Shape(format!(
            "optimizer length mismatch: target {}, grad {}, state {}",
            target.len(),
            grad.len(),
            state.slot1.len()
        )));
    }
    state.step += 1;
    let lr = state.lr;
    for ((x, v), &g) in target.iter_mut().zip(&mut state.slot1).zip(grad) {
        *v = momentum * *v + g;
        *x -= lr * *v;
    }
    Ok(())
}

/// SGD-momentum over a `ParamVec` target.
pub fn sgd_momentum_step(
    state: &mut OptState,
    params: &mut ParamVec,
    grad: &ParamVec,
) -> Result<(), DiffMathError> {
    if !params.same_shape(grad) {
        return Err(DiffMathError::Shape(
            "sgd_momentum_step: params/grad shape mismatch".into(),
        ));
    }
    sgd_momentum_step_flat(state, params.as_mut_slice(), grad.as_slice())
}

/// One bias-corrected Adam update with decoupled weight decay.
pub fn adam_step(
    state: &mut OptState,
    target: &mut [f64],
    grad: &[f64],
) -> Result<(), DiffMathError> {
    let (beta1, beta2, epsilon) = match state.kind {
        OptKind::Adam {
            beta1,
            beta2,
            epsilon,
        } => (beta1, beta2, epsilon),
        _ => {
            return Err(DiffMathError::Capability(
                "adam_step on a non-Adam optimizer state".into(),
            ))
        }
    };
    if target.len() != grad.len() || target.len() != state.slot1.len() {
        return Err(DiffMathError::Shape(format!(
            "optimizer length mismatch: target {}, grad {}, state {}",
            target.len(),
            grad.len(),
            state.slot1.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let lr = state.lr;
    let wd = state.weight_decay;
    for i in 0..target.len() {
        let g = grad[i];
        state.slot1[i] = beta1 * state.slot1[i] + (1.0 - beta1) * g;
        state.slot2[i] = beta2 * state.slot2[i] + (1.0 - beta2) * g * g;
        let m_hat = state.slot1[i] / bc1;
        let v_hat = state.slot2[i] / bc2;
        target[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        if wd > 0.0 {
            target[i] -= lr * wd * target[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::params::LayerShape;

    fn param(values: Vec<f64>) -> ParamVec {
        let n = values.len();
        ParamVec::new(
            values,
            vec![LayerShape {
                input: n - 1,
                output: 1,
            }],
        )
    }

    #[test]
    fn plain_sgd_decreases_by_lr() {
        // mu=0, lr=0.1, unit gradient: every coordinate drops by 0.1 per step.
        let mut p = param(vec![1.0, 1.0, 1.0]);
        let g = param(vec![1.0, 1.0, 1.0]);
        let mut st = OptState::sgd_momentum(0.1, 0.0, 3);
        for k in 1..=5 {
            sgd_momentum_step(&mut st, &mut p, &g).unwrap();
            for &v in p.as_slice() {
                assert!((v - (1.0 - 0.1 * k as f64)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn momentum_matches_geometric_series() {
        // Constant gradient g with momentum mu: v_t = g*(1-mu^t)/(1-mu) and
        // x_T = x_0 - lr*g*sum_{t=1..T} (1-mu^t)/(1-mu).
        let mu = 0.9;
        let lr = 0.01;
        let g0 = 2.0;
        let steps = 25;
        let mut p = param(vec![0.0, 0.0]);
        let g = param(vec![g0, g0]);
        let mut st = OptState::sgd_momentum(lr, mu, 2);
        for _ in 0..steps {
            sgd_momentum_step(&mut st, &mut p, &g).unwrap();
        }
        let mut expected = 0.0;
        for t in 1..=steps {
            expected -= lr * g0 * (1.0 - mu.powi(t)) / (1.0 - mu);
        }
        for &v in p.as_slice() {
            assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = param(vec![0.3, -0.7]);
        let before = p.clone();
        let g = ParamVec::zeros_like(&p);
        let mut st = OptState::sgd_momentum(0.1, 0.9, 2);
        sgd_momentum_step(&mut st, &mut p, &g).unwrap();
        assert_eq!(p, before);

        let mut x = vec![0.3, -0.7];
        let mut ad = OptState::adam(0.01, 0.0, 2);
        adam_step(&mut ad, &mut x, &[0.0, 0.0]).unwrap();
        assert_eq!(x, vec![0.3, -0.7]);
    }

    #[test]
    fn adam_first_step_is_almost_lr() {
        // Bias correction makes m_hat/sqrt(v_hat) ~= 1 on the first step.
        let mut x = vec![0.0; 4];
        let mut st = OptState::adam(0.01, 0.0, 4);
        adam_step(&mut st, &mut x, &[1.0; 4]).unwrap();
        for &v in &x {
            assert!(
                (v + 0.01).abs() < 1e-6,
                "first Adam step {v} should be ~ -0.01"
            );
        }
    }

    #[test]
    fn adam_contracts_quadratic() {
        // 100 steps on f(x)=x^2 from x=1 shrinks |x|.
        let mut x = vec![1.0];
        let mut st = OptState::adam(0.01, 0.0, 1);
        for _ in 0..100 {
            let g = [2.0 * x[0]];
            adam_step(&mut st, &mut x, &g).unwrap();
        }
        assert!(x[0].abs() < 1.0, "Adam failed to make progress: {}", x[0]);
    }

    #[test]
    fn steps_are_bitwise_deterministic() {
        let run = || {
            let mut x = vec![0.5, -0.25, 4.0];
            let mut st = OptState::adam(0.05, 0.01, 3);
            for k in 0..10 {
                let g: Vec<f64> = x.iter().map(|v| v * 0.3 + k as f64).collect();
                adam_step(&mut st, &mut x, &g).unwrap();
            }
            (x, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let mut x = vec![0.0; 3];
        let mut st = OptState::adam(0.01, 0.0, 3);
        let err = adam_step(&mut st, &mut x, &[1.0; 2]).unwrap_err();
        assert!(matches!(err, DiffMathError::Shape(_)));
    }
}
