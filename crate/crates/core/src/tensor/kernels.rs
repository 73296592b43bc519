//! Forward kernels and adjoints for the non-elementwise tape primitives.

use rayon::prelude::*;

use super::{Result, TensorError};

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| {
        let off = n - s.len();
        if i < off {
            1
        } else {
            s[i - off]
        }
    };
    (0..n)
        .map(|i| match (dim(a, i), dim(b, i)) {
            (x, y) if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// For every element of `out`, the flat index of the element of a tensor of
/// shape `shape` it reads under broadcasting. `None` when no broadcasting is
/// needed (the map would be the identity).
pub(crate) fn broadcast_index(shape: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if shape == out {
        return None;
    }
    let total: usize = out.iter().product();
    if shape.iter().product::<usize>() == 1 {
        return Some(vec![0; total]);
    }
    let off = out.len() - shape.len();
    let mut strides = vec![0usize; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + off] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; out.len()];
    let mut flat = 0usize;
    for _ in 0..total {
        map.push(flat);
        for d in (0..out.len()).rev() {
            counter[d] += 1;
            flat += strides[d];
            if counter[d] < out[d] {
                break;
            }
            flat -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    Some(map)
}

/// Sums `grad` (laid out over `out`) back onto an input of `len` elements.
pub(crate) fn reduce_broadcast(grad: Vec<f64>, map: Option<&[usize]>, len: usize) -> Vec<f64> {
    match map {
        None => grad,
        Some(map) => {
            let mut acc = vec![0.0; len];
            for (g, &i) in grad.iter().zip(map) {
                acc[i] += g;
            }
            acc
        }
    }
}

/// Row-major `[m, k] x [k, n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    out
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Framing geometry shared by the frame-extraction and overlap-add primitives.
///
/// Frame `t` reads signal samples `t * hop + offset .. t * hop + offset + frame_len`;
/// positions outside `0..signal_len` read as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub hop: usize,
    pub frames: usize,
    pub offset: isize,
    pub signal_len: usize,
}

impl FrameSpec {
    #[inline]
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        let p = (t * self.hop + j) as isize + self.offset;
        (p >= 0 && (p as usize) < self.signal_len).then_some(p as usize)
    }
}

pub(crate) fn frame(x: &[f64], spec: &FrameSpec) -> Vec<f64> {
    let n = spec.frame_len;
    let mut out = vec![0.0; spec.frames * n];
    for t in 0..spec.frames {
        for j in 0..n {
            if let Some(p) = spec.source(t, j) {
                out[t * n + j] = x[p];
            }
        }
    }
    out
}

pub(crate) fn overlap_add(frames: &[f64], spec: &FrameSpec) -> Vec<f64> {
    let n = spec.frame_len;
    let mut out = vec![0.0; spec.signal_len];
    for t in 0..spec.frames {
        for j in 0..n {
            if let Some(p) = spec.source(t, j) {
                out[p] += frames[t * n + j];
            }
        }
    }
    out
}

/// `out[i] = sum_j taps[j] * x[i - j - delay]`.
pub(crate) fn causal_fir(x: &[f64], taps: &[f64], delay: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    out.par_chunks_mut(1024).enumerate().for_each(|(c, chunk)| {
        let base = c * 1024;
        for (o, y) in chunk.iter_mut().enumerate() {
            let i = base + o;
            let mut acc = 0.0;
            for (j, &w) in taps.iter().enumerate() {
                let lag = j + delay;
                if lag > i {
                    break;
                }
                acc += w * x[i - lag];
            }
            *y = acc;
        }
    });
    out
}

pub(crate) fn causal_fir_adjoint(
    x: &[f64],
    taps: &[f64],
    delay: usize,
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let len = x.len();
    let mut dx = vec![0.0; len];
    dx.par_chunks_mut(1024).enumerate().for_each(|(c, chunk)| {
        let base = c * 1024;
        for (o, d) in chunk.iter_mut().enumerate() {
            let m = base + o;
            let mut acc = 0.0;
            for (j, &w) in taps.iter().enumerate() {
                let i = m + j + delay;
                if i >= len {
                    break;
                }
                acc += w * grad[i];
            }
            *d = acc;
        }
    });
    let dtaps = (0..taps.len())
        .into_par_iter()
        .map(|j| {
            let lag = j + delay;
            (lag..len).map(|i| grad[i] * x[i - lag]).sum()
        })
        .collect();
    (dx, dtaps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn output_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.padding;
        if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
            return Err(TensorError::Invalid(format!(
                "avg_pool: kernel {} stride {} padding {} does not fit length {len}",
                self.kernel, self.stride, self.padding
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    fn window(&self, i: usize, len: usize) -> std::ops::Range<usize> {
        let start = (i * self.stride) as isize - self.padding as isize;
        let end = start + self.kernel as isize;
        (start.max(0) as usize)..(end.min(len as isize).max(0) as usize)
    }
}

/// Average pooling that excludes padded positions from the divisor.
pub(crate) fn avg_pool(x: &[f64], spec: &PoolSpec, out_len: usize) -> Vec<f64> {
    (0..out_len)
        .map(|i| {
            let w = spec.window(i, x.len());
            let count = w.len().max(1) as f64;
            x[w].iter().sum::<f64>() / count
        })
        .collect()
}

pub(crate) fn avg_pool_adjoint(grad: &[f64], spec: &PoolSpec, len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; len];
    for (i, &g) in grad.iter().enumerate() {
        let w = spec.window(i, len);
        let share = g / w.len().max(1) as f64;
        for d in &mut dx[w] {
            *d += share;
        }
    }
    dx
}

/// Linear interpolation of the last axis onto new sample positions.
///
/// Entry `j` of `points` is `(i, frac)`: the output reads
/// `x[i] + frac * (x[i + 1] - x[i])`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ResamplePlan {
    pub in_len: usize,
    pub points: Vec<(usize, f64)>,
}

impl ResamplePlan {
    /// Resample `in_len` uniformly spaced points spanning an interval onto
    /// `out_len` uniformly spaced points spanning the same interval.
    pub fn uniform(in_len: usize, out_len: usize) -> Self {
        assert!(in_len >= 2 && out_len >= 2);
        let step = (in_len - 1) as f64 / (out_len - 1) as f64;
        let points = (0..out_len)
            .map(|j| {
                if j == out_len - 1 {
                    return (in_len - 2, 1.0);
                }
                let pos = j as f64 * step;
                let i = (pos.floor() as usize).min(in_len - 2);
                (i, pos - i as f64)
            })
            .collect();
        Self { in_len, points }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let rows = x.len() / self.in_len;
        let mut out = Vec::with_capacity(rows * self.points.len());
        for r in 0..rows {
            let row = &x[r * self.in_len..(r + 1) * self.in_len];
            for &(i, f) in &self.points {
                let (a, b) = (row[i], row[i + 1]);
                // Rounding can push a + f (b - a) past the segment ends.
                let v = a + f * (b - a);
                out.push(v.clamp(a.min(b), a.max(b)));
            }
        }
        out
    }

    pub fn adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let m = self.points.len();
        let rows = grad.len() / m;
        let mut out = vec![0.0; rows * self.in_len];
        for r in 0..rows {
            let dst = &mut out[r * self.in_len..(r + 1) * self.in_len];
            for (&(i, f), &g) in self.points.iter().zip(&grad[r * m..(r + 1) * m]) {
                dst[i] += g * (1.0 - f);
                dst[i + 1] += g * f;
            }
        }
        out
    }
}
