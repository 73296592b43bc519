//! Training losses: feature MSE, the multi-resolution spectrogram loss, and
//! the hinge / feature-matching algebra for externally supplied
//! discriminator outputs.

use crate::error::{invalid, Result};
use crate::synth::Stft;
use crate::tensor::{UnaryOp, Var};

/// Multi-resolution spectrogram loss settings. Scale `s` (1-based) uses a
/// Hann window of `2^(first_exponent + s - 1)` samples and 75% overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MslConfig {
    pub scales: usize,
    pub first_exponent: u32,
    pub kappa: f64,
    /// Magnitude floor before the log term.
    pub eps_log: f64,
}

impl Default for MslConfig {
    fn default() -> Self {
        Self {
            scales: 6,
            first_exponent: 6,
            kappa: 1.0,
            eps_log: 1e-7,
        }
    }
}

impl MslConfig {
    pub fn window_sizes(&self) -> Vec<usize> {
        (0..self.scales as u32)
            .map(|s| 1usize << (self.first_exponent + s))
            .collect()
    }
}

/// Mean of squared differences over all elements.
pub fn mse<'t>(x: Var<'t>, x_hat: Var<'t>) -> Result<Var<'t>> {
    same_shape("mse", &x, &x_hat)?;
    Ok(x.sub(x_hat)?.square().mean())
}

/// STFT magnitude `|F(x)|` of a 1-D signal, frames x bins.
pub fn magnitude<'t>(x: Var<'t>, stft: &Stft) -> Result<Var<'t>> {
    Ok(stft.forward(x)?.square().sum_axis(0)?.sqrt()?)
}

/// Single-resolution term: `mean|X - Y| + kappa * mean|ln X - ln Y|`.
pub fn spectral_term<'t>(
    x: Var<'t>,
    x_hat: Var<'t>,
    window: usize,
    kappa: f64,
    eps_log: f64,
) -> Result<Var<'t>> {
    let stft = Stft::new(window, window / 4)?;
    let (a, b) = (magnitude(x, &stft)?, magnitude(x_hat, &stft)?);
    let lin = a.sub(b)?.abs().mean();
    let log = a
        .clamp_min(eps_log)
        .ln()?
        .sub(b.clamp_min(eps_log).ln()?)?
        .abs()
        .mean();
    Ok(lin.add(log.scale(kappa))?)
}

/// Multi-resolution spectrogram loss between equal-length 1-D signals.
pub fn msl<'t>(x: Var<'t>, x_hat: Var<'t>, cfg: &MslConfig) -> Result<Var<'t>> {
    same_shape("msl", &x, &x_hat)?;
    if x.shape().len() != 1 {
        return Err(invalid(format!("msl expects 1-D signals, got {:?}", x.shape())));
    }
    if cfg.scales == 0 {
        return Err(invalid("msl needs at least one scale"));
    }
    let mut total: Option<Var<'t>> = None;
    for window in cfg.window_sizes() {
        let term = spectral_term(x, x_hat, window, cfg.kappa, cfg.eps_log)?;
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    Ok(total.expect("at least one scale"))
}

/// `alpha * mse(X, X_hat) + beta * msl(x, x_hat)`.
pub fn nll<'t>(
    features: (Var<'t>, Var<'t>),
    audio: (Var<'t>, Var<'t>),
    alpha: f64,
    beta: f64,
    cfg: &MslConfig,
) -> Result<Var<'t>> {
    let m = mse(features.0, features.1)?.scale(alpha);
    let s = msl(audio.0, audio.1, cfg)?.scale(beta);
    Ok(m.add(s)?)
}

/// `mu * sum_k mean(-D_k)`.
pub fn hinge_generator<'t>(scores: &[Var<'t>], mu: f64) -> Result<Var<'t>> {
    let first = scores.first().ok_or_else(|| invalid("no discriminator scores"))?;
    let mut total = first.tape().scalar(0.0);
    for d in scores {
        total = total.add(d.neg().mean())?;
    }
    Ok(total.scale(mu))
}

/// Feature-matching loss over maps indexed `[k][i][j]`: discriminator `k`,
/// layer `i`, map `j`. Each layer contributes
/// `(1 / N_i) * mean |real - fake|` with the mean over every element of the
/// layer's `N_i` maps.
pub fn feature_matching<'t>(
    real: &[Vec<Vec<Var<'t>>>],
    fake: &[Vec<Vec<Var<'t>>>],
    lambda: f64,
) -> Result<Var<'t>> {
    if real.len() != fake.len() {
        return Err(invalid("real and fake map lists have different discriminator counts"));
    }
    let mut total: Option<Var<'t>> = None;
    for (k, (rk, fk)) in real.iter().zip(fake).enumerate() {
        if rk.len() != fk.len() {
            return Err(invalid(format!("discriminator {k}: layer counts differ")));
        }
        for (i, (ri, fi)) in rk.iter().zip(fk).enumerate() {
            if ri.len() != fi.len() || ri.is_empty() {
                return Err(invalid(format!(
                    "discriminator {k}, layer {i}: map counts differ or are zero"
                )));
            }
            let mut sum: Option<Var<'t>> = None;
            let mut count = 0usize;
            for (r, f) in ri.iter().zip(fi) {
                same_shape("feature_matching", r, f)?;
                count += r.len();
                let s = r.sub(*f)?.abs().sum();
                sum = Some(match sum {
                    None => s,
                    Some(acc) => acc.add(s)?,
                });
            }
            let n_i = ri.len() as f64;
            let layer = sum.expect("non-empty").scale(1.0 / (count as f64 * n_i));
            total = Some(match total {
                None => layer,
                Some(acc) => acc.add(layer)?,
            });
        }
    }
    let total = total.ok_or_else(|| invalid("no feature maps"))?;
    Ok(total.scale(lambda))
}

/// Sign convention for [`hinge_discriminator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HingeForm {
    /// `min(0, 1 - D(x)) + min(0, 1 + D(x_hat))`.
    #[default]
    AsPrinted,
    /// `max(0, 1 - D(x)) + max(0, 1 + D(x_hat))`.
    Conventional,
}

/// `mu * sum_k (mean h(1 - D_k(x)) + mean h(1 + D_k(x_hat)))` with `h` chosen
/// by `form`.
pub fn hinge_discriminator<'t>(
    real: &[Var<'t>],
    fake: &[Var<'t>],
    mu: f64,
    form: HingeForm,
) -> Result<Var<'t>> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(invalid("real and fake score lists must be non-empty and equal length"));
    }
    let h = |v: Var<'t>| -> Result<Var<'t>> {
        let kind = match form {
            HingeForm::AsPrinted => UnaryOp::Clamp { min: None, max: Some(0.0) },
            HingeForm::Conventional => UnaryOp::Clamp { min: Some(0.0), max: None },
        };
        Ok(v.unary(kind)?.mean())
    };
    let mut total = real[0].tape().scalar(0.0);
    for (r, f) in real.iter().zip(fake) {
        let term = h(r.neg().offset(1.0))?.add(h(f.offset(1.0))?)?;
        total = total.add(term)?;
    }
    Ok(total.scale(mu))
}

/// Downsample by `2^(k - 1)` with repeated average pooling
/// (kernel 4, stride 2, padding 1).
pub fn downsample<'t>(x: Var<'t>, k: usize) -> Result<Var<'t>> {
    if k == 0 {
        return Err(invalid("discriminator index k starts at 1"));
    }
    let mut y = x;
    for _ in 1..k {
        y = y.avg_pool1d(4, 2, 1)?;
    }
    Ok(y)
}

fn same_shape(op: &str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(invalid(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
