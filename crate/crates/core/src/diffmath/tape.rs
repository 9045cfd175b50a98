//! Minimal reverse-mode tape over a fixed operation set.
//!
//! The gradient-matching objective needs derivatives *through* a parameter
//! gradient. Rather than differentiating a generic tape twice, the analytic
//! backprop formulas for the supported model classes are unrolled as forward
//! tape operations (affine, ReLU, softmax, reductions, scalar arithmetic),
//! so one reverse sweep yields the second-order quantity. ReLU derivative
//! masks are captured as constants, the standard almost-everywhere choice.
//!
//! Scalars are 1x1 matrices so the node storage stays uniform.

use super::matrix::Matrix;

pub type NodeId = usize;

enum Op {
    /// Differentiation variable.
    Leaf,
    /// x*W + b with constant W (p x q); b only matters on the forward pass.
    Affine {
        x: NodeId,
        w: Matrix,
    },
    Relu {
        a: NodeId,
    },
    Softmax {
        a: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        s: f64,
    },
    /// Elementwise product with a constant mask.
    MulMask {
        a: NodeId,
        mask: Matrix,
    },
    /// a^T * b, both tracked.
    MatMulAt {
        a: NodeId,
        b: NodeId,
    },
    /// a * W^T with constant W.
    MatMulBtConst {
        a: NodeId,
        w: Matrix,
    },
    /// Row vector of column sums.
    ColSum {
        a: NodeId,
    },
    /// sum((a - C)^2) with constant C; 1x1 output.
    SumSqDiffConst {
        a: NodeId,
        c: Matrix,
    },
    /// sum(a^2); 1x1 output.
    SumSq {
        a: NodeId,
    },
    /// sum(a .* C) with constant C; 1x1 output.
    DotConst {
        a: NodeId,
        c: Matrix,
    },
    SAdd {
        a: NodeId,
        b: NodeId,
    },
    SDiv {
        a: NodeId,
        b: NodeId,
    },
    SSqrt {
        a: NodeId,
    },
    SMaxConst {
        a: NodeId,
        c: f64,
    },
    OneMinus {
        a: NodeId,
    },
}

struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(
            (self.value(id).rows(), self.value(id).cols()),
            (1, 1),
            "scalar node expected"
        );
        self.value(id).as_slice()[0]
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn affine(&mut self, x: NodeId, w: Matrix, b: &[f64]) -> NodeId {
        let value = self.value(x).matmul(&w).add_row_broadcast(b);
        self.push(Op::Affine { x, w }, value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).relu();
        self.push(Op::Relu { a }, value)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let value = super::loss::softmax_unchecked(self.value(a));
        self.push(Op::Softmax { a }, value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).sub(self.value(b));
        self.push(Op::Sub { a, b }, value)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.value(a).scale(s);
        self.push(Op::Scale { a, s }, value)
    }

    pub fn mul_mask(&mut self, a: NodeId, mask: Matrix) -> NodeId {
        let value = self.value(a).hadamard(&mask);
        self.push(Op::MulMask { a, mask }, value)
    }

    pub fn matmul_at(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul_at(self.value(b));
        self.push(Op::MatMulAt { a, b }, value)
    }

    pub fn matmul_bt_const(&mut self, a: NodeId, w: Matrix) -> NodeId {
        let value = self.value(a).matmul_bt(&w);
        self.push(Op::MatMulBtConst { a, w }, value)
    }

    pub fn col_sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, self.value(a).cols(), self.value(a).col_sums());
        self.push(Op::ColSum { a }, value)
    }

    pub fn sum_sq_diff_const(&mut self, a: NodeId, c: Matrix) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).sub(&c).sum_sq()]);
        self.push(Op::SumSqDiffConst { a, c }, value)
    }

    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).sum_sq()]);
        self.push(Op::SumSq { a }, value)
    }

    pub fn dot_const(&mut self, a: NodeId, c: Matrix) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).dot(&c)]);
        self.push(Op::DotConst { a, c }, value)
    }

    pub fn s_add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![self.scalar(a) + self.scalar(b)]);
        self.push(Op::SAdd { a, b }, value)
    }

    pub fn s_div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![self.scalar(a) / self.scalar(b)]);
        self.push(Op::SDiv { a, b }, value)
    }

    pub fn s_sqrt(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![self.scalar(a).sqrt()]);
        self.push(Op::SSqrt { a }, value)
    }

    pub fn s_max_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![self.scalar(a).max(c)]);
        self.push(Op::SMaxConst { a, c }, value)
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![1.0 - self.scalar(a)]);
        self.push(Op::OneMinus { a }, value)
    }

    /// Reverse sweep from a scalar output node. Returns a gradient matrix
    /// per node; callers read the entries for their leaves.
    pub fn backward(&self, output: NodeId) -> Vec<Matrix> {
        let mut grads: Vec<Matrix> = self
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[output] = Matrix::from_vec(1, 1, vec![1.0]);

        for id in (0..=output).rev() {
            let g = grads[id].clone();
            if g.as_slice().iter().all(|&v| v == 0.0) {
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Affine { x, w } => {
                    let dx = g.matmul_bt(w);
                    accumulate(&mut grads[*x], &dx);
                }
                Op::Relu { a } => {
                    let mask = self.nodes[*a].value.relu_mask();
                    accumulate(&mut grads[*a], &g.hadamard(&mask));
                }
                Op::Softmax { a } => {
                    let da = super::grad::softmax_backward(&self.nodes[id].value, &g);
                    accumulate(&mut grads[*a], &da);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads[*a], &g);
                    accumulate_neg(&mut grads[*b], &g);
                }
                Op::Scale { a, s } => {
                    accumulate(&mut grads[*a], &g.scale(*s));
                }
                Op::MulMask { a, mask } => {
                    accumulate(&mut grads[*a], &g.hadamard(mask));
                }
                Op::MatMulAt { a, b } => {
                    // out = a^T b  =>  da += b g^T, db += a g
                    let da = self.nodes[*b].value.matmul_bt(&g);
                    accumulate(&mut grads[*a], &da);
                    let db = self.nodes[*a].value.matmul(&g);
                    accumulate(&mut grads[*b], &db);
                }
                Op::MatMulBtConst { a, w } => {
                    accumulate(&mut grads[*a], &g.matmul(w));
                }
                Op::ColSum { a } => {
                    let rows = self.nodes[*a].value.rows();
                    let mut da = Matrix::zeros(rows, g.cols());
                    for r in 0..rows {
                        da.row_mut(r).copy_from_slice(g.row(0));
                    }
                    accumulate(&mut grads[*a], &da);
                }
                Op::SumSqDiffConst { a, c } => {
                    let s = g.as_slice()[0];
                    let da = self.nodes[*a].value.sub(c).scale(2.0 * s);
                    accumulate(&mut grads[*a], &da);
                }
                Op::SumSq { a } => {
                    let s = g.as_slice()[0];
                    let da = self.nodes[*a].value.scale(2.0 * s);
                    accumulate(&mut grads[*a], &da);
                }
                Op::DotConst { a, c } => {
                    let s = g.as_slice()[0];
                    accumulate(&mut grads[*a], &c.scale(s));
                }
                Op::SAdd { a, b } => {
                    accumulate(&mut grads[*a], &g);
                    accumulate(&mut grads[*b], &g);
                }
                Op::SDiv { a, b } => {
                    let s = g.as_slice()[0];
                    let av = self.scalar(*a);
                    let bv = self.scalar(*b);
                    grads[*a].as_mut_slice()[0] += s / bv;
                    grads[*b].as_mut_slice()[0] -= s * av / (bv * bv);
                }
                Op::SSqrt { a } => {
                    let s = g.as_slice()[0];
                    let out = self.scalar(id);
                    grads[*a].as_mut_slice()[0] += s / (2.0 * out);
                }
                Op::SMaxConst { a, c } => {
                    if self.scalar(*a) > *c {
                        let s = g.as_slice()[0];
                        grads[*a].as_mut_slice()[0] += s;
                    }
                }
                Op::OneMinus { a } => {
                    grads[*a].as_mut_slice()[0] -= g.as_slice()[0];
                }
            }
        }
        grads
    }
}

fn accumulate(target: &mut Matrix, delta: &Matrix) {
    for (t, d) in target.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *t += d;
    }
}

fn accumulate_neg(target: &mut Matrix, delta: &Matrix) {
    for (t, d) in target.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *t -= d;
    }
}
