//! Eager reverse-mode tape.
//!
//! Every operation on a [`Var`] evaluates immediately and appends one node to
//! its [`Tape`]. Node ids increase in creation order and inputs always precede
//! outputs, so walking ids downwards from the loss is a reverse topological
//! order that visits each node once.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::LN_10;
use std::fmt;
use std::sync::Arc;

use super::fft;
use super::kernels::{self, PoolSpec, ResamplePlan};
use super::{Result, Tensor, TensorError};

pub use super::kernels::FrameSpec;

type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Ln,
    Log10,
    Sqrt,
    Abs,
    Sigmoid,
    Square,
    Scale(f64),
    Offset(f64),
    /// Clip into `[min, max]`; either bound may be absent. The gradient
    /// passes where the input lies inside the closed interval.
    Clamp {
        min: Option<f64>,
        max: Option<f64>,
    },
}

enum Op {
    Leaf,
    Binary {
        kind: BinaryOp,
        lhs: NodeId,
        rhs: NodeId,
    },
    Unary {
        kind: UnaryOp,
        input: NodeId,
    },
    Sum(NodeId),
    Mean(NodeId),
    SumAxis {
        input: NodeId,
        axis: usize,
    },
    MatMul {
        lhs: NodeId,
        rhs: NodeId,
    },
    Reshape(NodeId),
    Rfft {
        input: NodeId,
        n: usize,
    },
    Irfft {
        input: NodeId,
        n: usize,
    },
    Frame {
        input: NodeId,
        spec: FrameSpec,
    },
    OverlapAdd {
        input: NodeId,
        spec: FrameSpec,
    },
    CausalFir {
        signal: NodeId,
        taps: NodeId,
        delay: usize,
    },
    AvgPool {
        input: NodeId,
        spec: PoolSpec,
    },
    Resample {
        input: NodeId,
        plan: Arc<ResamplePlan>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations. One pipeline evaluation per tape; the tape
/// is not shared across threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf that receives a gradient on [`Var::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar loss with respect to the parameters of a tape.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::param`]; `None` for constants
    /// and for parameters the loss does not depend on.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(&var.id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn check_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
    }

    fn derive(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'t> {
        self.tape.push(value, op, requires_grad)
    }

    // ---- elementwise -------------------------------------------------

    pub fn binary(self, kind: BinaryOp, other: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(&other);
        let a = self.value();
        let b = other.value();
        let name = match kind {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Pow => "pow",
        };
        let shape = kernels::broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
            TensorError::ShapeMismatch {
                op: name,
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            }
        })?;
        let ma = kernels::broadcast_index(a.shape(), &shape);
        let mb = kernels::broadcast_index(b.shape(), &shape);
        let total: usize = shape.iter().product();
        let (ad, bd) = (a.data(), b.data());
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
            BinaryOp::Div => |x, y| x / y,
            BinaryOp::Pow => f64::powf,
        };
        let mut out = Vec::with_capacity(total);
        for i in 0..total {
            let x = ad[ma.as_ref().map_or(i, |m| m[i])];
            let y = bd[mb.as_ref().map_or(i, |m| m[i])];
            if kind == BinaryOp::Pow && x < 0.0 && y.fract() != 0.0 {
                return Err(TensorError::Domain {
                    op: "pow",
                    index: i,
                    value: x,
                });
            }
            out.push(f(x, y));
        }
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.derive(
            Tensor::from_parts(shape, out),
            Op::Binary {
                kind,
                lhs: self.id,
                rhs: other.id,
            },
            rg,
        ))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Div, other)
    }

    pub fn pow(self, exponent: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Pow, exponent)
    }

    pub fn unary(self, kind: UnaryOp) -> Result<Var<'t>> {
        let x = self.value();
        let check = |op: &'static str, bad: fn(f64) -> bool| -> Result<()> {
            match x.data().iter().position(|&v| bad(v)) {
                Some(index) => Err(TensorError::Domain {
                    op,
                    index,
                    value: x.data()[index],
                }),
                None => Ok(()),
            }
        };
        match kind {
            UnaryOp::Ln => check("ln", |v| v.is_nan() || v <= 0.0)?,
            UnaryOp::Log10 => check("log10", |v| v.is_nan() || v <= 0.0)?,
            UnaryOp::Sqrt => check("sqrt", |v| v.is_nan() || v < 0.0)?,
            _ => {}
        }
        let out: Vec<f64> = x.data().iter().map(|&v| apply_unary(kind, v)).collect();
        Ok(self.derive(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::Unary {
                kind,
                input: self.id,
            },
            self.requires_grad(),
        ))
    }

    fn total_unary(self, kind: UnaryOp) -> Var<'t> {
        self.unary(kind).expect("operation has no domain restriction")
    }

    pub fn neg(self) -> Var<'t> {
        self.total_unary(UnaryOp::Neg)
    }

    pub fn exp(self) -> Var<'t> {
        self.total_unary(UnaryOp::Exp)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.unary(UnaryOp::Ln)
    }

    pub fn log10(self) -> Result<Var<'t>> {
        self.unary(UnaryOp::Log10)
    }

    /// Square root. At exactly zero the gradient is taken as zero.
    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(UnaryOp::Sqrt)
    }

    pub fn abs(self) -> Var<'t> {
        self.total_unary(UnaryOp::Abs)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.total_unary(UnaryOp::Sigmoid)
    }

    pub fn square(self) -> Var<'t> {
        self.total_unary(UnaryOp::Square)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.total_unary(UnaryOp::Scale(c))
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.total_unary(UnaryOp::Offset(c))
    }

    pub fn clamp_min(self, min: f64) -> Var<'t> {
        self.total_unary(UnaryOp::Clamp {
            min: Some(min),
            max: None,
        })
    }

    pub fn clamp(self, min: f64, max: f64) -> Var<'t> {
        self.total_unary(UnaryOp::Clamp {
            min: Some(min),
            max: Some(max),
        })
    }

    // ---- reductions and shape ----------------------------------------

    pub fn sum(self) -> Var<'t> {
        let s: f64 = self.value().data().iter().sum();
        self.derive(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(self) -> Var<'t> {
        let x = self.value();
        let s: f64 = x.data().iter().sum::<f64>() / x.len().max(1) as f64;
        self.derive(Tensor::scalar(s), Op::Mean(self.id), self.requires_grad())
    }

    /// Sum over one axis, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(TensorError::Invalid(format!(
                "sum_axis: axis {axis} out of range for shape {:?}",
                x.shape()
            )));
        }
        let (outer, mid, inner) = split_axis(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let src = &x.data()[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        Ok(self.derive(
            Tensor::from_parts(shape, out),
            Op::SumAxis {
                input: self.id,
                axis,
            },
            self.requires_grad(),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.derive(v, Op::Reshape(self.id), self.requires_grad()))
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(&other);
        let a = self.value();
        let b = other.value();
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let out = kernels::matmul(a.data(), b.data(), m, k, n);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.derive(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul {
                lhs: self.id,
                rhs: other.id,
            },
            rg,
        ))
    }

    // ---- spectral ----------------------------------------------------

    /// Real FFT of size `n` along the last axis (zero-padded up to `n`).
    ///
    /// Shape `[.., L]` becomes `[2, .., n/2 + 1]`.
    pub fn rfft(self, n: usize) -> Result<Var<'t>> {
        check_fft_size(n)?;
        let x = self.value();
        let (rows, len) = last_axis(x.shape());
        if len > n {
            return Err(TensorError::Invalid(format!(
                "rfft: signal length {len} exceeds fft size {n}"
            )));
        }
        let out = fft::rfft_rows(x.data(), rows, len, n);
        let mut shape = vec![2];
        shape.extend_from_slice(&x.shape()[..x.ndim().saturating_sub(1)]);
        shape.push(fft::bins(n));
        Ok(self.derive(
            Tensor::from_parts(shape, out),
            Op::Rfft { input: self.id, n },
            self.requires_grad(),
        ))
    }

    /// Inverse of [`Var::rfft`]: `[2, .., n/2 + 1]` becomes `[.., n]`.
    pub fn irfft(self, n: usize) -> Result<Var<'t>> {
        check_fft_size(n)?;
        let x = self.value();
        let shape = x.shape();
        if shape.len() < 2 || shape[0] != 2 || shape[shape.len() - 1] != fft::bins(n) {
            return Err(TensorError::ShapeMismatch {
                op: "irfft",
                left: shape.to_vec(),
                right: vec![2, fft::bins(n)],
            });
        }
        let rows: usize = shape[1..shape.len() - 1].iter().product();
        let out = fft::irfft_rows(x.data(), rows, n);
        let mut out_shape = shape[1..shape.len() - 1].to_vec();
        out_shape.push(n);
        Ok(self.derive(
            Tensor::from_parts(out_shape, out),
            Op::Irfft { input: self.id, n },
            self.requires_grad(),
        ))
    }

    /// Slice a 1-D signal into `[frames, frame_len]`.
    pub fn frame(self, spec: FrameSpec) -> Result<Var<'t>> {
        let x = self.value();
        if x.shape() != [spec.signal_len] {
            return Err(TensorError::ShapeMismatch {
                op: "frame",
                left: x.shape().to_vec(),
                right: vec![spec.signal_len],
            });
        }
        let out = kernels::frame(x.data(), &spec);
        Ok(self.derive(
            Tensor::from_parts(vec![spec.frames, spec.frame_len], out),
            Op::Frame {
                input: self.id,
                spec,
            },
            self.requires_grad(),
        ))
    }

    /// Overlap-add `[frames, frame_len]` into a 1-D signal; adjoint of [`Var::frame`].
    pub fn overlap_add(self, spec: FrameSpec) -> Result<Var<'t>> {
        let x = self.value();
        if x.shape() != [spec.frames, spec.frame_len] {
            return Err(TensorError::ShapeMismatch {
                op: "overlap_add",
                left: x.shape().to_vec(),
                right: vec![spec.frames, spec.frame_len],
            });
        }
        let out = kernels::overlap_add(x.data(), &spec);
        Ok(self.derive(
            Tensor::from_parts(vec![spec.signal_len], out),
            Op::OverlapAdd {
                input: self.id,
                spec,
            },
            self.requires_grad(),
        ))
    }

    /// Causal FIR filter: `y[i] = sum_j taps[j] * x[i - j - delay]`, output
    /// truncated to the input length.
    pub fn causal_fir(self, taps: Var<'t>, delay: usize) -> Result<Var<'t>> {
        self.check_tape(&taps);
        let x = self.value();
        let w = taps.value();
        if x.ndim() != 1 || w.ndim() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "causal_fir",
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        let out = kernels::causal_fir(x.data(), w.data(), delay);
        let rg = self.requires_grad() || taps.requires_grad();
        Ok(self.derive(
            Tensor::from_vec(out),
            Op::CausalFir {
                signal: self.id,
                taps: taps.id,
                delay,
            },
            rg,
        ))
    }

    /// 1-D average pooling; padded positions are excluded from each average.
    pub fn avg_pool1d(self, kernel: usize, stride: usize, padding: usize) -> Result<Var<'t>> {
        let x = self.value();
        if x.ndim() != 1 {
            return Err(TensorError::Invalid(format!(
                "avg_pool1d expects a 1-D signal, got {:?}",
                x.shape()
            )));
        }
        let spec = PoolSpec {
            kernel,
            stride,
            padding,
        };
        let out_len = spec.output_len(x.len())?;
        let out = kernels::avg_pool(x.data(), &spec, out_len);
        Ok(self.derive(
            Tensor::from_vec(out),
            Op::AvgPool {
                input: self.id,
                spec,
            },
            self.requires_grad(),
        ))
    }

    /// Linearly resample the last axis from `L` uniformly spaced points onto
    /// `out_len` uniformly spaced points over the same span (endpoints kept).
    pub fn resample_uniform(self, out_len: usize) -> Result<Var<'t>> {
        let (_, len) = last_axis(&self.shape());
        if len < 2 || out_len < 2 {
            return Err(TensorError::Invalid(format!(
                "resample needs at least two points on each grid ({len} -> {out_len})"
            )));
        }
        self.resample(Arc::new(ResamplePlan::uniform(len, out_len)))
    }

    pub(crate) fn resample(self, plan: Arc<ResamplePlan>) -> Result<Var<'t>> {
        let x = self.value();
        let (_, len) = last_axis(x.shape());
        if len != plan.in_len {
            return Err(TensorError::ShapeMismatch {
                op: "resample",
                left: x.shape().to_vec(),
                right: vec![plan.in_len],
            });
        }
        let out = plan.apply(x.data());
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = plan.points.len();
        Ok(self.derive(
            Tensor::from_parts(shape, out),
            Op::Resample {
                input: self.id,
                plan,
            },
            self.requires_grad(),
        ))
    }

    // ---- reverse pass ------------------------------------------------

    /// Back-propagate from this scalar to every parameter it depends on.
    ///
    /// A loss that does not depend on any parameter yields empty gradients.
    /// The tape stays intact, so several losses may be differentiated.
    pub fn backward(&self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        let mut result = Gradients::default();
        if !root.requires_grad {
            return Ok(result);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.id + 1];
        grads[self.id] = Some(vec![1.0]);
        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                result
                    .grads
                    .insert(id, Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            propagate(&nodes, node, &g, &mut grads);
        }
        Ok(result)
    }
}

fn apply_unary(kind: UnaryOp, v: f64) -> f64 {
    match kind {
        UnaryOp::Neg => -v,
        UnaryOp::Exp => v.exp(),
        UnaryOp::Ln => v.ln(),
        UnaryOp::Log10 => v.log10(),
        UnaryOp::Sqrt => v.sqrt(),
        UnaryOp::Abs => v.abs(),
        UnaryOp::Sigmoid => {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        }
        UnaryOp::Square => v * v,
        UnaryOp::Scale(c) => v * c,
        UnaryOp::Offset(c) => v + c,
        UnaryOp::Clamp { min, max } => {
            let lo = min.map_or(v, |m| v.max(m));
            max.map_or(lo, |m| lo.min(m))
        }
    }
}

fn unary_grad(kind: UnaryOp, x: f64, y: f64, g: f64) -> f64 {
    match kind {
        UnaryOp::Neg => -g,
        UnaryOp::Exp => g * y,
        UnaryOp::Ln => g / x,
        UnaryOp::Log10 => g / (x * LN_10),
        UnaryOp::Sqrt => {
            if y > 0.0 {
                g / (2.0 * y)
            } else {
                0.0
            }
        }
        UnaryOp::Abs => {
            if x > 0.0 {
                g
            } else if x < 0.0 {
                -g
            } else {
                0.0
            }
        }
        UnaryOp::Sigmoid => g * y * (1.0 - y),
        UnaryOp::Square => 2.0 * x * g,
        UnaryOp::Scale(c) => g * c,
        UnaryOp::Offset(_) => g,
        UnaryOp::Clamp { min, max } => {
            let inside = min.is_none_or(|m| x >= m) && max.is_none_or(|m| x <= m);
            if inside {
                g
            } else {
                0.0
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    match &mut grads[id] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let wants = |id: NodeId| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => unreachable!(),
        Op::Binary { kind, lhs, rhs } => {
            let a = &nodes[*lhs].value;
            let b = &nodes[*rhs].value;
            let shape = node.value.shape();
            let ma = kernels::broadcast_index(a.shape(), shape);
            let mb = kernels::broadcast_index(b.shape(), shape);
            let at = |i: usize| a.data()[ma.as_ref().map_or(i, |m| m[i])];
            let bt = |i: usize| b.data()[mb.as_ref().map_or(i, |m| m[i])];
            let out = node.value.data();
            if wants(*lhs) {
                let ga: Vec<f64> = (0..g.len())
                    .map(|i| match kind {
                        BinaryOp::Add | BinaryOp::Sub => g[i],
                        BinaryOp::Mul => g[i] * bt(i),
                        BinaryOp::Div => g[i] / bt(i),
                        BinaryOp::Pow => {
                            let (x, p) = (at(i), bt(i));
                            if p == 0.0 {
                                0.0
                            } else {
                                g[i] * p * x.powf(p - 1.0)
                            }
                        }
                    })
                    .collect();
                accumulate(grads, *lhs, kernels::reduce_broadcast(ga, ma.as_deref(), a.len()));
            }
            if wants(*rhs) {
                let gb: Vec<f64> = (0..g.len())
                    .map(|i| match kind {
                        BinaryOp::Add => g[i],
                        BinaryOp::Sub => -g[i],
                        BinaryOp::Mul => g[i] * at(i),
                        BinaryOp::Div => -g[i] * at(i) / (bt(i) * bt(i)),
                        BinaryOp::Pow => {
                            let x = at(i);
                            if x > 0.0 {
                                g[i] * out[i] * x.ln()
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect();
                accumulate(grads, *rhs, kernels::reduce_broadcast(gb, mb.as_deref(), b.len()));
            }
        }
        Op::Unary { kind, input } => {
            let x = nodes[*input].value.data();
            let y = node.value.data();
            let gi = (0..g.len())
                .map(|i| unary_grad(*kind, x[i], y[i], g[i]))
                .collect();
            accumulate(grads, *input, gi);
        }
        Op::Sum(input) => {
            let n = nodes[*input].value.len();
            accumulate(grads, *input, vec![g[0]; n]);
        }
        Op::Mean(input) => {
            let n = nodes[*input].value.len();
            accumulate(grads, *input, vec![g[0] / n.max(1) as f64; n]);
        }
        Op::SumAxis { input, axis } => {
            let x = &nodes[*input].value;
            let (outer, mid, inner) = split_axis(x.shape(), *axis);
            let mut gi = vec![0.0; x.len()];
            for o in 0..outer {
                for m in 0..mid {
                    gi[(o * mid + m) * inner..(o * mid + m + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(grads, *input, gi);
        }
        Op::MatMul { lhs, rhs } => {
            let a = &nodes[*lhs].value;
            let b = &nodes[*rhs].value;
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            if wants(*lhs) {
                let bt = kernels::transpose(b.data(), k, n);
                accumulate(grads, *lhs, kernels::matmul(g, &bt, m, n, k));
            }
            if wants(*rhs) {
                let at = kernels::transpose(a.data(), m, k);
                accumulate(grads, *rhs, kernels::matmul(&at, g, k, m, n));
            }
        }
        Op::Reshape(input) => accumulate(grads, *input, g.to_vec()),
        Op::Rfft { input, n } => {
            let x = &nodes[*input].value;
            let (rows, len) = last_axis(x.shape());
            accumulate(grads, *input, fft::rfft_adjoint(g, rows, len, *n));
        }
        Op::Irfft { input, n } => {
            let rows = node.value.len() / n;
            accumulate(grads, *input, fft::irfft_adjoint(g, rows, *n));
        }
        Op::Frame { input, spec } => accumulate(grads, *input, kernels::overlap_add(g, spec)),
        Op::OverlapAdd { input, spec } => accumulate(grads, *input, kernels::frame(g, spec)),
        Op::CausalFir {
            signal,
            taps,
            delay,
        } => {
            let x = nodes[*signal].value.data();
            let w = nodes[*taps].value.data();
            let (dx, dw) = kernels::causal_fir_adjoint(x, w, *delay, g);
            if wants(*signal) {
                accumulate(grads, *signal, dx);
            }
            if wants(*taps) {
                accumulate(grads, *taps, dw);
            }
        }
        Op::AvgPool { input, spec } => {
            let len = nodes[*input].value.len();
            accumulate(grads, *input, kernels::avg_pool_adjoint(g, spec, len));
        }
        Op::Resample { input, plan } => accumulate(grads, *input, plan.adjoint(g)),
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn last_axis(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&len, lead)) => (lead.iter().product(), len),
        None => (1, 1),
    }
}

fn check_fft_size(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(TensorError::FftSize(n));
    }
    Ok(())
}
