//! Row-batched real FFT kernels and their exact adjoints.
//!
//! Spectra use the planar layout `[2][rows][n/2 + 1]`. Rows are independent,
//! so they are distributed over the rayon pool; each row is computed the same
//! way regardless of thread count.

use std::cell::RefCell;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

pub(crate) fn bins(n: usize) -> usize {
    n / 2 + 1
}

/// Forward real FFT of `rows` signals of length `len <= n`, zero-padded to `n`.
pub(crate) fn rfft_rows(input: &[f64], rows: usize, len: usize, n: usize) -> Vec<f64> {
    let nb = bins(n);
    let fft = plan(n, false);
    let mut out = vec![0.0; 2 * rows * nb];
    let (re, im) = out.split_at_mut(rows * nb);
    re.par_chunks_mut(nb)
        .zip(im.par_chunks_mut(nb))
        .enumerate()
        .for_each_init(
            || vec![Complex::new(0.0, 0.0); n],
            |buf, (r, (re_row, im_row))| {
                let src = &input[r * len..(r + 1) * len];
                for (b, &x) in buf.iter_mut().zip(src) {
                    *b = Complex::new(x, 0.0);
                }
                for b in buf[len..].iter_mut() {
                    *b = Complex::new(0.0, 0.0);
                }
                fft.process(buf);
                for k in 0..nb {
                    re_row[k] = buf[k].re;
                    im_row[k] = buf[k].im;
                }
            },
        );
    out
}

/// Adjoint of [`rfft_rows`]: maps a planar spectrum gradient back to signal rows of length `len`.
pub(crate) fn rfft_adjoint(grad: &[f64], rows: usize, len: usize, n: usize) -> Vec<f64> {
    let nb = bins(n);
    let ifft = plan(n, true);
    let (g_re, g_im) = grad.split_at(rows * nb);
    let mut out = vec![0.0; rows * len];
    out.par_chunks_mut(len.max(1))
        .enumerate()
        .for_each_init(
            || vec![Complex::new(0.0, 0.0); n],
            |buf, (r, dst)| {
                for b in buf.iter_mut() {
                    *b = Complex::new(0.0, 0.0);
                }
                for k in 0..nb {
                    buf[k] = Complex::new(g_re[r * nb + k], g_im[r * nb + k]);
                }
                ifft.process(buf);
                for (d, b) in dst.iter_mut().zip(buf.iter()) {
                    *d = b.re;
                }
            },
        );
    out
}

/// Inverse real FFT of planar half-spectra to real rows of length `n`.
///
/// Imaginary parts of the DC and Nyquist bins do not contribute.
pub(crate) fn irfft_rows(input: &[f64], rows: usize, n: usize) -> Vec<f64> {
    let nb = bins(n);
    let ifft = plan(n, true);
    let (x_re, x_im) = input.split_at(rows * nb);
    let scale = 1.0 / n as f64;
    let mut out = vec![0.0; rows * n];
    out.par_chunks_mut(n).enumerate().for_each_init(
        || vec![Complex::new(0.0, 0.0); n],
        |buf, (r, dst)| {
            let re = &x_re[r * nb..(r + 1) * nb];
            let im = &x_im[r * nb..(r + 1) * nb];
            buf[0] = Complex::new(re[0], 0.0);
            buf[n / 2] = Complex::new(re[n / 2], 0.0);
            for k in 1..n / 2 {
                buf[k] = Complex::new(re[k], im[k]);
                buf[n - k] = Complex::new(re[k], -im[k]);
            }
            ifft.process(buf);
            for (d, b) in dst.iter_mut().zip(buf.iter()) {
                *d = b.re * scale;
            }
        },
    );
    out
}

/// Adjoint of [`irfft_rows`].
pub(crate) fn irfft_adjoint(grad: &[f64], rows: usize, n: usize) -> Vec<f64> {
    let nb = bins(n);
    let fft = plan(n, false);
    let inv_n = 1.0 / n as f64;
    let mut out = vec![0.0; 2 * rows * nb];
    let (re, im) = out.split_at_mut(rows * nb);
    re.par_chunks_mut(nb)
        .zip(im.par_chunks_mut(nb))
        .enumerate()
        .for_each_init(
            || vec![Complex::new(0.0, 0.0); n],
            |buf, (r, (re_row, im_row))| {
                for (b, &g) in buf.iter_mut().zip(&grad[r * n..(r + 1) * n]) {
                    *b = Complex::new(g, 0.0);
                }
                fft.process(buf);
                re_row[0] = buf[0].re * inv_n;
                im_row[0] = 0.0;
                re_row[n / 2] = buf[n / 2].re * inv_n;
                im_row[n / 2] = 0.0;
                for k in 1..n / 2 {
                    re_row[k] = 2.0 * buf[k].re * inv_n;
                    im_row[k] = 2.0 * buf[k].im * inv_n;
                }
            },
        );
    out
}
