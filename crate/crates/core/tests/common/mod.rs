#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Max relative error between the tape gradient of `f` at `x0` and central
/// differences with step `h`.
pub fn grad_rel_err(
    shape: &[usize],
    x0: &[f64],
    h: f64,
    f: impl for<'t> Fn(diffworld::tensor::Var<'t>) -> diffworld::tensor::Var<'t>,
) -> f64 {
    use diffworld::tensor::{Tape, Tensor};
    let analytic = {
        let tape = Tape::new();
        let x = tape.param(Tensor::new(shape, x0.to_vec()).unwrap());
        let g = f(x).backward().unwrap();
        g.get(x).unwrap().to_vec()
    };
    let numeric = fd_gradient(
        |v| {
            let tape = Tape::new();
            let x = tape.constant(Tensor::new(shape, v.to_vec()).unwrap());
            f(x).value().item().unwrap()
        },
        x0,
        h,
    );
    max_rel_err(&analytic, &numeric, 1e-8)
}
