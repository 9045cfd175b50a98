//! Shared test utilities: finite-difference oracles (independent of the
//! implementation's gradient paths), dataset locations, and a minimal XML
//! well-formedness checker.
#![allow(dead_code)] // each test binary uses its own subset

use dflsim_core::diffmath::{cross_entropy, forward_probs, Labels, Matrix, ParamVec};
use std::path::PathBuf;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

/// Central finite differences of the mean cross-entropy with respect to the
/// parameters, through the forward pass only.
pub fn fd_grad_params(params: &ParamVec, x: &Matrix, y: &[usize], h: f64) -> ParamVec {
    let mut g = ParamVec::zeros_like(params);
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = params.clone();
        minus.as_mut_slice()[i] -= h;
        let lp = cross_entropy(&forward_probs(&plus, x).unwrap(), Labels::Hard(y)).unwrap();
        let lm = cross_entropy(&forward_probs(&minus, x).unwrap(), Labels::Hard(y)).unwrap();
        g.as_mut_slice()[i] = (lp - lm) / (2.0 * h);
    }
    g
}

/// Central finite differences with respect to the inputs.
pub fn fd_grad_inputs(params: &ParamVec, x: &Matrix, y: &[usize], h: f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            plus[(i, j)] += h;
            let mut minus = x.clone();
            minus[(i, j)] -= h;
            let lp =
                cross_entropy(&forward_probs(params, &plus).unwrap(), Labels::Hard(y)).unwrap();
            let lm =
                cross_entropy(&forward_probs(params, &minus).unwrap(), Labels::Hard(y)).unwrap();
            g[(i, j)] = (lp - lm) / (2.0 * h);
        }
    }
    g
}

/// Worst relative error between two flat gradients, with an absolute floor
/// so near-zero entries do not blow up the ratio.
pub fn max_rel_err(got: &[f64], want: &[f64], floor: f64) -> f64 {
    got.iter()
        .zip(want)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Minimal XML well-formedness check: declaration, balanced tags, quoted
/// attribute values. Enough to catch malformed plot output without an XML
/// dependency.
pub fn check_xml(text: &str) -> Result<(), String> {
    let mut rest = text.trim_start();
    if rest.starts_with("<?xml") {
        let end = rest.find("?>").ok_or("unterminated declaration")?;
        rest = &rest[end + 2..];
    }
    let mut stack: Vec<String> = Vec::new();
    let mut chars = rest.char_indices().peekable();
    let bytes = rest;
    while let Some((i, c)) = chars.next() {
        if c != '<' {
            continue;
        }
        let close = bytes[i..].find('>').ok_or(format!("unclosed tag at {i}"))? + i;
        let inner = &bytes[i + 1..close];
        if let Some(closing) = inner.strip_prefix('/') {
            let name = closing.trim();
            match stack.pop() {
                Some(open) if open == name => {}
                Some(open) => return Err(format!("mismatched </{name}> after <{open}>")),
                None => return Err(format!("stray closing tag </{name}>")),
            }
        } else {
            let self_closing = inner.ends_with('/');
            let body = if self_closing {
                &inner[..inner.len() - 1]
            } else {
                inner
            };
            let name = body.split_whitespace().next().ok_or("empty tag")?;
            let quotes = body.matches('"').count();
            if quotes % 2 != 0 {
                return Err(format!("unbalanced quotes in <{name}>"));
            }
            if !self_closing {
                stack.push(name.to_string());
            }
        }
        while let Some(&(j, _)) = chars.peek() {
            if j <= close {
                chars.next();
            } else {
                break;
            }
        }
    }
    if stack.is_empty() {
        Ok(())
    } else {
        Err(format!("unclosed tags: {stack:?}"))
    }
}
