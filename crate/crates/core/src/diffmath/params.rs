//! Flat parameter vector with per-layer shape metadata.
//!
//! The layout is fixed: for each affine layer, the weight block (input x
//! output, row-major) followed by the bias block (output). `ParamVec` is the
//! unit exchanged between federation clients.

use super::matrix::Matrix;

/// Dimensions of one affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec {
    data: Vec<f64>,
    shapes: Vec<LayerShape>,
}

impl ParamVec {
    pub fn new(data: Vec<f64>, shapes: Vec<LayerShape>) -> Self {
        let expect: usize = shapes.iter().map(|s| s.param_count()).sum();
        assert_eq!(data.len(), expect, "param vector length mismatch");
        ParamVec { data, shapes }
    }

    pub fn zeros(shapes: Vec<LayerShape>) -> Self {
        let len = shapes.iter().map(|s| s.param_count()).sum();
        ParamVec {
            data: vec![0.0; len],
            shapes,
        }
    }

    pub fn zeros_like(other: &ParamVec) -> Self {
        ParamVec::zeros(other.shapes.clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn same_shape(&self, other: &ParamVec) -> bool {
        self.shapes == other.shapes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.shapes[..layer].iter().map(|s| s.param_count()).sum()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let s = self.shapes[layer];
        let off = self.layer_offset(layer);
        &self.data[off..off + s.input * s.output]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = self.shapes[layer];
        let off = self.layer_offset(layer) + s.input * s.output;
        &self.data[off..off + s.output]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.shapes[layer];
        let off = self.layer_offset(layer);
        &mut self.data[off..off + s.input * s.output]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.shapes[layer];
        let off = self.layer_offset(layer) + s.input * s.output;
        &mut self.data[off..off + s.output]
    }

    /// Weight block of one layer as an `input x output` matrix.
    pub fn weight_matrix(&self, layer: usize) -> Matrix {
        let s = self.shapes[layer];
        Matrix::from_vec(s.input, s.output, self.weights(layer).to_vec())
    }

    /// self += alpha * other
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamVec) {
        assert!(self.same_shape(other), "param shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn sub(&self, other: &ParamVec) -> ParamVec {
        assert!(self.same_shape(other), "param shape mismatch");
        ParamVec {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
            shapes: self.shapes.clone(),
        }
    }

    pub fn scale(&self, s: f64) -> ParamVec {
        ParamVec {
            data: self.data.iter().map(|v| v * s).collect(),
            shapes: self.shapes.clone(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVec) -> f64 {
        assert!(self.same_shape(other), "param shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
