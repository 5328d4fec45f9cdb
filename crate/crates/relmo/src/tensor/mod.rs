//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every tensor created through it and records each
//! operation in execution order. [`Tape::backward`] walks that record in
//! exact reverse order, accumulating adjoints, so a tensor consumed by
//! several later operations receives the sum of all its downstream
//! contributions. Handles are plain indices ([`TensorId`]), which keeps the
//! graph free of reference cycles and makes the traversal order obvious.
//!
//! The op set is exactly what the prediction network needs: 2-D matrix
//! multiplication, elementwise arithmetic, a few activations, softmax,
//! layer/batch normalization, dropout, and shape plumbing (transpose,
//! column slices, concatenation). All values are f64; all shapes are
//! explicit; every operation that can be misused returns an error naming
//! the offending shapes instead of panicking.
//!
//! A tape and its tensors are confined to one thread. Training creates a
//! fresh tape per step; parameters live outside the tape (see
//! [`crate::model::ModelParams`]) and enter each step as leaves.

pub mod check;

use crate::rng::DetRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {shape:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    LengthMismatch {
        op: &'static str,
        len: usize,
        shape: Vec<usize>,
    },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("batch norm in training mode needs at least 2 rows, got {rows}")]
    BatchTooSmall { rows: usize },
    #[error("dropout probability must lie in [0, 1), got {p}")]
    BadDropout { p: f64 },
    #[error("{op}: invalid column range {lo}..{hi} for {cols} columns")]
    BadSlice {
        op: &'static str,
        lo: usize,
        hi: usize,
        cols: usize,
    },
}

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// One recorded tensor: values, shape, and (after backward) its gradient.
#[derive(Debug, Clone)]
struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// The recorded operation that produced a node, with everything its
/// backward rule needs cached at forward time.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddBias { a: TensorId, bias: TensorId },
    Scale { a: TensorId, c: f64 },
    AddScalar { a: TensorId },
    Recip { a: TensorId },
    MulByScalar { a: TensorId, s: TensorId },
    Sigmoid { a: TensorId },
    Tanh { a: TensorId },
    Gelu { a: TensorId },
    Dropout { a: TensorId, mask: Vec<f64> },
    Concat { parts: Vec<TensorId>, axis: usize },
    SliceCols { a: TensorId, lo: usize, hi: usize },
    Transpose { a: TensorId },
    Sum { a: TensorId },
    Mean { a: TensorId },
    Softmax { a: TensorId, axis: usize },
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>, // one per row
    },
    BatchNorm {
        x: TensorId,
        gain: TensorId,
        beta: TensorId,
        xhat: Vec<f64>,
        col_scale: Vec<f64>, // 1/sqrt(var + eps) per column
        training: bool,
    },
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
/// PyTorch-style momentum: `running = (1 - m) * running + m * observed`.
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Execution-ordered record of tensors and the ops that made them.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    rng: DetRng,
    /// Every softmax output produced on this tape, for instrumented
    /// row-stochasticity checks over a whole forward pass.
    softmax_records: Vec<(TensorId, usize)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::with_seed(0)
    }

    /// A tape whose stochastic ops (dropout) draw from the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            rng: DetRng::derive(seed, 0x7a9e),
            softmax_records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(data.len(), numel(&shape));
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            grad: None,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Insert a leaf that will receive a gradient.
    pub fn param(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId, TapeError> {
        self.leaf(data, shape, true)
    }

    /// Insert a leaf that backward treats as a constant.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId, TapeError> {
        self.leaf(data, shape, false)
    }

    pub fn leaf(
        &mut self,
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
    ) -> Result<TensorId, TapeError> {
        if data.len() != numel(&shape) {
            return Err(TapeError::LengthMismatch {
                op: "leaf",
                len: data.len(),
                shape,
            });
        }
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> TensorId {
        let n = numel(&shape);
        self.push(vec![0.0; n], shape, false, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![v], vec![1], false, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn shape_of(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Gradient of a tensor, if backward has reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Softmax outputs recorded on this tape, as `(id, axis)` pairs.
    pub fn softmax_records(&self) -> &[(TensorId, usize)] {
        &self.softmax_records
    }

    fn rows_cols(&self, id: TensorId, op: &'static str) -> Result<(usize, usize), TapeError> {
        let s = self.shape_of(id);
        match s {
            [r, c] => Ok((*r, *c)),
            _ => Err(TapeError::BadShape {
                op,
                expected: "a 2-D tensor",
                shape: s.to_vec(),
            }),
        }
    }

    fn any_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---------------------------------------------------------------- ops

    /// 2-D matrix product: `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let (m, ka) = self.rows_cols(a, "matmul")?;
        let (kb, n) = self.rows_cols(b, "matmul")?;
        if ka != kb {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape_of(a).to_vec(),
                rhs: self.shape_of(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..m {
                for p in 0..ka {
                    let x = av[i * ka + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bval) in orow.iter_mut().zip(brow) {
                        *o += x * bval;
                    }
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, vec![m, n], rg, Op::MatMul { a, b }))
    }

    fn elementwise_pair(
        &mut self,
        a: TensorId,
        b: TensorId,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId, TapeError> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(TapeError::ShapeMismatch {
                op: op_name,
                lhs: self.shape_of(a).to_vec(),
                rhs: self.shape_of(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape_of(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, shape, rg, op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        self.elementwise_pair(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        self.elementwise_pair(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    /// Hadamard (elementwise) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        self.elementwise_pair(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    /// Add a length-`c` bias vector to every row of a `[r, c]` tensor.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId, TapeError> {
        let (r, c) = self.rows_cols(a, "add_bias")?;
        if self.shape_of(bias) != [c] {
            return Err(TapeError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape_of(a).to_vec(),
                rhs: self.shape_of(bias).to_vec(),
            });
        }
        let mut out = Vec::with_capacity(r * c);
        {
            let av = self.value(a);
            let bv = self.value(bias);
            for i in 0..r {
                for j in 0..c {
                    out.push(av[i * c + j] + bv[j]);
                }
            }
        }
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(out, vec![r, c], rg, Op::AddBias { a, bias }))
    }

    /// Multiply by a compile-time-known constant.
    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape_of(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, shape, rg, Op::Scale { a, c })
    }

    /// Add a constant to every element.
    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x + c).collect();
        let shape = self.shape_of(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, shape, rg, Op::AddScalar { a })
    }

    /// Elementwise reciprocal. Caller guarantees nonzero inputs.
    pub fn recip(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self.value(a).iter().map(|&x| 1.0 / x).collect();
        let shape = self.shape_of(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, shape, rg, Op::Recip { a })
    }

    /// Multiply every element of `a` by a single-element tensor `s`.
    pub fn mul_by_scalar(&mut self, a: TensorId, s: TensorId) -> Result<TensorId, TapeError> {
        if numel(self.shape_of(s)) != 1 {
            return Err(TapeError::BadShape {
                op: "mul_by_scalar",
                expected: "a single-element tensor",
                shape: self.shape_of(s).to_vec(),
            });
        }
        let sv = self.value(s)[0];
        let out: Vec<f64> = self.value(a).iter().map(|&x| x * sv).collect();
        let shape = self.shape_of(a).to_vec();
        let rg = self.any_grad(&[a, s]);
        Ok(self.push(out, shape, rg, Op::MulByScalar { a, s }))
    }

    fn unary(
        &mut self,
        a: TensorId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> TensorId {
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape_of(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, shape, rg, op)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, sigmoid_scalar, Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(a, f64::tanh, Op::Tanh { a })
    }

    /// GELU, tanh approximation (forward and backward use the same form).
    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, gelu_scalar, Op::Gelu { a })
    }

    /// Inverted dropout: in training mode keeps each element with
    /// probability `1 - p` and scales survivors by `1/(1 - p)`; in eval
    /// mode (or at `p == 0`) it is the identity and records nothing.
    pub fn dropout(
        &mut self,
        a: TensorId,
        p: f64,
        training: bool,
    ) -> Result<TensorId, TapeError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TapeError::BadDropout { p });
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let n = self.value(a).len();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.shape_of(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, shape, rg, Op::Dropout { a, mask }))
    }

    /// Concatenate 2-D tensors along `axis` (0 = stack rows, 1 = widen).
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId, TapeError> {
        if parts.is_empty() || axis > 1 {
            return Err(TapeError::BadShape {
                op: "concat",
                expected: "at least one part and axis 0 or 1",
                shape: vec![parts.len(), axis],
            });
        }
        let (r0, c0) = self.rows_cols(parts[0], "concat")?;
        let mut rows = r0;
        let mut cols = c0;
        for &p in &parts[1..] {
            let (r, c) = self.rows_cols(p, "concat")?;
            match axis {
                0 if c == c0 => rows += r,
                1 if r == r0 => cols += c,
                _ => {
                    return Err(TapeError::ShapeMismatch {
                        op: "concat",
                        lhs: vec![r0, c0],
                        rhs: vec![r, c],
                    })
                }
            }
        }
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(self.value(p));
            }
        } else {
            for i in 0..rows {
                for &p in parts {
                    let (_, c) = self.rows_cols(p, "concat")?;
                    let v = self.value(p);
                    out.extend_from_slice(&v[i * c..(i + 1) * c]);
                }
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            out,
            vec![rows, cols],
            rg,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Columns `lo..hi` of a 2-D tensor.
    pub fn slice_cols(
        &mut self,
        a: TensorId,
        lo: usize,
        hi: usize,
    ) -> Result<TensorId, TapeError> {
        let (r, c) = self.rows_cols(a, "slice_cols")?;
        if lo >= hi || hi > c {
            return Err(TapeError::BadSlice {
                op: "slice_cols",
                lo,
                hi,
                cols: c,
            });
        }
        let w = hi - lo;
        let mut out = Vec::with_capacity(r * w);
        {
            let v = self.value(a);
            for i in 0..r {
                out.extend_from_slice(&v[i * c + lo..i * c + hi]);
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, vec![r, w], rg, Op::SliceCols { a, lo, hi }))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, TapeError> {
        let (r, c) = self.rows_cols(a, "transpose")?;
        let mut out = vec![0.0; r * c];
        {
            let v = self.value(a);
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = v[i * c + j];
                }
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, vec![c, r], rg, Op::Transpose { a }))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.value(a).iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![s], vec![1], rg, Op::Sum { a })
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.value(a).len();
        let s: f64 = self.value(a).iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![s / n as f64], vec![1], rg, Op::Mean { a })
    }

    /// Numerically stable softmax along `axis` of a 2-D tensor
    /// (axis 1: each row sums to one; axis 0: each column).
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId, TapeError> {
        let (r, c) = self.rows_cols(a, "softmax")?;
        if axis > 1 {
            return Err(TapeError::BadShape {
                op: "softmax",
                expected: "axis 0 or 1",
                shape: vec![axis],
            });
        }
        let v = self.value(a).to_vec();
        let mut out = vec![0.0; r * c];
        let (lanes, lane_len, stride, base) = if axis == 1 {
            (r, c, 1usize, c)
        } else {
            (c, r, c, 1usize)
        };
        for lane in 0..lanes {
            let at = |k: usize| v[lane * base + k * stride];
            let mut m = f64::NEG_INFINITY;
            for k in 0..lane_len {
                m = m.max(at(k));
            }
            let mut z = 0.0;
            for k in 0..lane_len {
                z += (at(k) - m).exp();
            }
            for k in 0..lane_len {
                out[lane * base + k * stride] = (at(k) - m).exp() / z;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        let id = self.push(out, vec![r, c], rg, Op::Softmax { a, axis });
        self.softmax_records.push((id, axis));
        Ok(id)
    }

    /// Per-row layer normalization of a `[r, c]` tensor with learnable
    /// per-column gain and bias, epsilon 1e-5.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
    ) -> Result<TensorId, TapeError> {
        let (r, c) = self.rows_cols(x, "layer_norm")?;
        for &aux in &[gain, bias] {
            if self.shape_of(aux) != [c] {
                return Err(TapeError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: self.shape_of(x).to_vec(),
                    rhs: self.shape_of(aux).to_vec(),
                });
            }
        }
        let v = self.value(x).to_vec();
        let g = self.value(gain).to_vec();
        let b = self.value(bias).to_vec();
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let xh = (row[j] - mu) * is;
                xhat[i * c + j] = xh;
                out[i * c + j] = xh * g[j] + b[j];
            }
        }
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            out,
            vec![r, c],
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Batch normalization over the row axis of a `[r, c]` tensor: each
    /// column is normalized across rows. In training mode the batch
    /// statistics are used (and folded into `running_mean`/`running_var`
    /// with momentum [`BATCH_NORM_MOMENTUM`]); in eval mode the running
    /// statistics are used. Training mode requires `r >= 2`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        beta: TensorId,
        running_mean: &mut [f64],
        running_var: &mut [f64],
        training: bool,
    ) -> Result<TensorId, TapeError> {
        let (r, c) = self.rows_cols(x, "batch_norm")?;
        for &aux in &[gain, beta] {
            if self.shape_of(aux) != [c] {
                return Err(TapeError::ShapeMismatch {
                    op: "batch_norm",
                    lhs: self.shape_of(x).to_vec(),
                    rhs: self.shape_of(aux).to_vec(),
                });
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(TapeError::ShapeMismatch {
                op: "batch_norm",
                lhs: vec![r, c],
                rhs: vec![running_mean.len(), running_var.len()],
            });
        }
        if training && r < 2 {
            return Err(TapeError::BatchTooSmall { rows: r });
        }
        let v = self.value(x).to_vec();
        let g = self.value(gain).to_vec();
        let b = self.value(beta).to_vec();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if training {
            for j in 0..c {
                let mut mu = 0.0;
                for i in 0..r {
                    mu += v[i * c + j];
                }
                mu /= r as f64;
                let mut s2 = 0.0;
                for i in 0..r {
                    let d = v[i * c + j] - mu;
                    s2 += d * d;
                }
                s2 /= r as f64;
                mean[j] = mu;
                var[j] = s2;
                running_mean[j] =
                    (1.0 - BATCH_NORM_MOMENTUM) * running_mean[j] + BATCH_NORM_MOMENTUM * mu;
                running_var[j] =
                    (1.0 - BATCH_NORM_MOMENTUM) * running_var[j] + BATCH_NORM_MOMENTUM * s2;
            }
        } else {
            mean.copy_from_slice(running_mean);
            var.copy_from_slice(running_var);
        }
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut col_scale = vec![0.0; c];
        for j in 0..c {
            col_scale[j] = 1.0 / (var[j] + BATCH_NORM_EPS).sqrt();
        }
        for i in 0..r {
            for j in 0..c {
                let xh = (v[i * c + j] - mean[j]) * col_scale[j];
                xhat[i * c + j] = xh;
                out[i * c + j] = xh * g[j] + b[j];
            }
        }
        let rg = self.any_grad(&[x, gain, beta]);
        Ok(self.push(
            out,
            vec![r, c],
            rg,
            Op::BatchNorm {
                x,
                gain,
                beta,
                xhat,
                col_scale,
                training,
            },
        ))
    }

    // ----------------------------------------------------------- backward

    /// Reverse-mode sweep from a scalar loss. Walks the record in exact
    /// reverse execution order; a tensor consumed by several ops receives
    /// the sum of their contributions. Repeated calls accumulate into
    /// existing gradients (no implicit zeroing).
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TapeError> {
        if self.nodes.is_empty() {
            return Err(TapeError::NonScalarLoss { shape: vec![] });
        }
        let lshape = self.shape_of(loss).to_vec();
        if numel(&lshape) != 1 {
            return Err(TapeError::NonScalarLoss { shape: lshape });
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        adj[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            if self.nodes[i].requires_grad {
                let node = &mut self.nodes[i];
                let grad = node.grad.get_or_insert_with(|| vec![0.0; node.data.len()]);
                for (gi, &gv) in grad.iter_mut().zip(&g) {
                    *gi += gv;
                }
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    /// Scatter the adjoint `g` of node `i` into its parents.
    fn propagate(&self, i: usize, g: &[f64], adj: &mut Vec<Vec<f64>>) {
        let acc = |adj: &mut Vec<Vec<f64>>, id: TensorId, contrib: Vec<f64>| {
            let slot = &mut adj[id.0];
            if slot.is_empty() {
                *slot = contrib;
            } else {
                for (s, c) in slot.iter_mut().zip(contrib) {
                    *s += c;
                }
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let av = &self.nodes[a.0].data;
                let bv = &self.nodes[b.0].data;
                // dA = g . B^T  ([m,n] x [n,k])
                let mut da = vec![0.0; m * k];
                for i0 in 0..m {
                    for j in 0..n {
                        let gv = g[i0 * n + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i0 * k + p] += gv * bv[p * n + j];
                        }
                    }
                }
                // dB = A^T . g  ([k,m] x [m,n])
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i0 in 0..m {
                        let x = av[i0 * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += x * g[i0 * n + j];
                        }
                    }
                }
                acc(adj, *a, da);
                acc(adj, *b, db);
            }
            Op::Add { a, b } => {
                acc(adj, *a, g.to_vec());
                acc(adj, *b, g.to_vec());
            }
            Op::Sub { a, b } => {
                acc(adj, *a, g.to_vec());
                acc(adj, *b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul { a, b } => {
                let av = &self.nodes[a.0].data;
                let bv = &self.nodes[b.0].data;
                acc(adj, *a, g.iter().zip(bv).map(|(&gv, &y)| gv * y).collect());
                acc(adj, *b, g.iter().zip(av).map(|(&gv, &x)| gv * x).collect());
            }
            Op::AddBias { a, bias } => {
                let c = self.nodes[bias.0].data.len();
                let r = g.len() / c;
                acc(adj, *a, g.to_vec());
                let mut dbias = vec![0.0; c];
                for i0 in 0..r {
                    for j in 0..c {
                        dbias[j] += g[i0 * c + j];
                    }
                }
                acc(adj, *bias, dbias);
            }
            Op::Scale { a, c } => {
                acc(adj, *a, g.iter().map(|&x| x * c).collect());
            }
            Op::AddScalar { a } => {
                acc(adj, *a, g.to_vec());
            }
            Op::Recip { a } => {
                // y = 1/x  =>  dx = -y^2 g
                let y = &self.nodes[i].data;
                acc(
                    adj,
                    *a,
                    g.iter().zip(y).map(|(&gv, &yv)| -gv * yv * yv).collect(),
                );
            }
            Op::MulByScalar { a, s } => {
                let sv = self.nodes[s.0].data[0];
                let av = &self.nodes[a.0].data;
                acc(adj, *a, g.iter().map(|&gv| gv * sv).collect());
                let ds: f64 = g.iter().zip(av).map(|(&gv, &x)| gv * x).sum();
                acc(adj, *s, vec![ds]);
            }
            Op::Sigmoid { a } => {
                let y = &self.nodes[i].data;
                acc(
                    adj,
                    *a,
                    g.iter()
                        .zip(y)
                        .map(|(&gv, &s)| gv * s * (1.0 - s))
                        .collect(),
                );
            }
            Op::Tanh { a } => {
                let y = &self.nodes[i].data;
                acc(
                    adj,
                    *a,
                    g.iter().zip(y).map(|(&gv, &t)| gv * (1.0 - t * t)).collect(),
                );
            }
            Op::Gelu { a } => {
                let x = &self.nodes[a.0].data;
                acc(
                    adj,
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(&gv, &xv)| gv * gelu_grad_scalar(xv))
                        .collect(),
                );
            }
            Op::Dropout { a, mask } => {
                acc(
                    adj,
                    *a,
                    g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect(),
                );
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].data.len();
                        acc(adj, p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                } else {
                    let rows = self.nodes[i].shape[0];
                    let total_cols = self.nodes[i].shape[1];
                    let mut col0 = 0;
                    for &p in parts {
                        let c = self.nodes[p.0].shape[1];
                        let mut dp = vec![0.0; rows * c];
                        for i0 in 0..rows {
                            for j in 0..c {
                                dp[i0 * c + j] = g[i0 * total_cols + col0 + j];
                            }
                        }
                        acc(adj, p, dp);
                        col0 += c;
                    }
                }
            }
            Op::SliceCols { a, lo, hi } => {
                let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let w = hi - lo;
                let mut da = vec![0.0; r * c];
                for i0 in 0..r {
                    for j in 0..w {
                        da[i0 * c + lo + j] = g[i0 * w + j];
                    }
                }
                acc(adj, *a, da);
            }
            Op::Transpose { a } => {
                let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                // output is [c, r]; transpose g back
                let mut da = vec![0.0; r * c];
                for i0 in 0..c {
                    for j in 0..r {
                        da[j * c + i0] = g[i0 * r + j];
                    }
                }
                acc(adj, *a, da);
            }
            Op::Sum { a } => {
                let n = self.nodes[a.0].data.len();
                acc(adj, *a, vec![g[0]; n]);
            }
            Op::Mean { a } => {
                let n = self.nodes[a.0].data.len();
                acc(adj, *a, vec![g[0] / n as f64; n]);
            }
            Op::Softmax { a, axis } => {
                let y = &self.nodes[i].data;
                let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                let (lanes, lane_len, stride, base) = if *axis == 1 {
                    (r, c, 1usize, c)
                } else {
                    (c, r, c, 1usize)
                };
                let mut da = vec![0.0; y.len()];
                for lane in 0..lanes {
                    let idx = |k: usize| lane * base + k * stride;
                    let mut dot = 0.0;
                    for k in 0..lane_len {
                        dot += y[idx(k)] * g[idx(k)];
                    }
                    for k in 0..lane_len {
                        da[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                    }
                }
                acc(adj, *a, da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                let gv = &self.nodes[gain.0].data;
                let mut dx = vec![0.0; r * c];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for i0 in 0..r {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..c {
                        let gy = g[i0 * c + j] * gv[j];
                        m1 += gy;
                        m2 += gy * xhat[i0 * c + j];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for j in 0..c {
                        let gy = g[i0 * c + j] * gv[j];
                        dx[i0 * c + j] =
                            inv_std[i0] * (gy - m1 - xhat[i0 * c + j] * m2);
                        dgain[j] += g[i0 * c + j] * xhat[i0 * c + j];
                        dbias[j] += g[i0 * c + j];
                    }
                }
                acc(adj, *x, dx);
                acc(adj, *gain, dgain);
                acc(adj, *bias, dbias);
            }
            Op::BatchNorm {
                x,
                gain,
                beta,
                xhat,
                col_scale,
                training,
            } => {
                let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                let gv = &self.nodes[gain.0].data;
                let mut dx = vec![0.0; r * c];
                let mut dgain = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for j in 0..c {
                    if *training {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for i0 in 0..r {
                            let gy = g[i0 * c + j] * gv[j];
                            m1 += gy;
                            m2 += gy * xhat[i0 * c + j];
                        }
                        m1 /= r as f64;
                        m2 /= r as f64;
                        for i0 in 0..r {
                            let gy = g[i0 * c + j] * gv[j];
                            dx[i0 * c + j] =
                                col_scale[j] * (gy - m1 - xhat[i0 * c + j] * m2);
                        }
                    } else {
                        for i0 in 0..r {
                            dx[i0 * c + j] = g[i0 * c + j] * gv[j] * col_scale[j];
                        }
                    }
                    for i0 in 0..r {
                        dgain[j] += g[i0 * c + j] * xhat[i0 * c + j];
                        dbeta[j] += g[i0 * c + j];
                    }
                }
                acc(adj, *x, dx);
                acc(adj, *gain, dgain);
                acc(adj, *beta, dbeta);
            }
        }
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
