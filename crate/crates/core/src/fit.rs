//! Analysis by synthesis: recover compressed features (and optionally FIR
//! taps) from a target waveform by Adam descent on the spectrogram loss.
//!
//! The noise excitation is drawn once from the configured seed and held
//! fixed, so the objective is deterministic. `s` is optimized directly; `a`
//! is optimized through logits and a sigmoid so it stays in `[0, 1]`.

use crate::error::{invalid, Error, Result};
use crate::features::{CompressedFeatures, FrameMeta, Waveform};
use crate::losses::{mse, msl, MslConfig};
use crate::melcodec::{MelBasis, MelSpec, DEFAULT_AP_BANDS, DEFAULT_MELS};
use crate::synth::{render_compressed, Excitation, FirPostFilter, PostGraph, SynthConfig, ZeroResidual};
use crate::tensor::{Tape, Tensor};

/// Amplitude the default initial `s` decodes to. Starting at exactly
/// `log10(eps)` decodes to silence, where every gradient vanishes.
pub const INIT_AMPLITUDE: f64 = 1e-3;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(invalid("adam eps must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(invalid(format!(
            "adam: {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Optional feature-space penalty `alpha * (mse(s, s_ref) + mse(a, a_ref))`.
#[derive(Debug, Clone)]
pub struct FeaturePenalty {
    pub alpha: f64,
    pub reference: CompressedFeatures,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub steps: usize,
    pub adam: AdamConfig,
    pub msl: MslConfig,
    /// Noise seed, fixed for the whole run.
    pub seed: u64,
    /// Mel count and aperiodicity bands of the default initialization.
    pub mels: usize,
    pub ap_bands: usize,
    pub penalty: Option<FeaturePenalty>,
    /// Also fit FIR taps of this length (initialized to zero).
    pub fir_len: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            adam: AdamConfig::default(),
            msl: MslConfig::default(),
            seed: 0,
            mels: DEFAULT_MELS,
            ap_bands: DEFAULT_AP_BANDS,
            penalty: None,
            fir_len: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("fit needs at least one step"));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub features: CompressedFeatures,
    pub fir: Option<FirPostFilter>,
    /// Loss before each update, one entry per step.
    pub trace: Vec<f64>,
    /// Loss of the returned parameters.
    pub final_loss: f64,
}

/// Means over consecutive non-overlapping windows (the last may be short).
pub fn smooth_trace(trace: &[f64], window: usize) -> Vec<f64> {
    trace
        .chunks(window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Default starting point: flat `s` decoding to [`INIT_AMPLITUDE`], `a = 0.5`.
pub fn default_init(f0: &[f64], meta: FrameMeta, mels: usize, bands: usize, eps: f64) -> Result<CompressedFeatures> {
    let t = f0.len();
    let s = Tensor::full(&[t, mels], (INIT_AMPLITUDE + eps).log10());
    let a = Tensor::full(&[t, bands], 0.5);
    CompressedFeatures::new(f0.to_vec(), s, a, meta)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `[frames, bands]` tensor holding `on` in voiced frames and `1 - on` elsewhere.
fn voicing_mask(f0: &[f64], bands: usize, on: f64) -> Tensor {
    let data = f0
        .iter()
        .flat_map(|&f| std::iter::repeat(if f > 0.0 { on } else { 1.0 - on }).take(bands))
        .collect();
    Tensor::new(&[f0.len(), bands], data).expect("mask shape")
}

struct Problem<'a> {
    target: Tensor,
    exc: Excitation,
    basis: MelBasis,
    synth: SynthConfig,
    frames: usize,
    mels: usize,
    bands: usize,
    voiced: Tensor,
    unvoiced: Tensor,
    cfg: &'a FitConfig,
}

impl Problem<'_> {
    /// Loss and gradients at the flat parameter vector `[s, logits, taps]`.
    fn evaluate(&self, params: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let ns = self.frames * self.mels;
        let na = self.frames * self.bands;
        let tape = Tape::new();
        let s = tape.param(Tensor::new(&[self.frames, self.mels], params[..ns].to_vec())?);
        let logits = tape.param(Tensor::new(&[self.frames, self.bands], params[ns..ns + na].to_vec())?);
        // Unvoiced frames carry ap = 1 by contract, so their logits are inert.
        let a = logits
            .sigmoid()
            .mul(tape.constant(self.voiced.clone()))?
            .add(tape.constant(self.unvoiced.clone()))?;
        let taps = self
            .cfg
            .fir_len
            .map(|_| tape.param(Tensor::from_vec(params[ns + na..].to_vec())));
        let post = taps.map(|free_taps| PostGraph {
            free_taps,
            net: &ZeroResidual,
        });
        let y = render_compressed(&self.exc, s, a, &self.basis, &self.synth, post)?;
        let mut loss = msl(tape.constant(self.target.clone()), y, &self.cfg.msl)?;
        if let Some(p) = &self.cfg.penalty {
            let ms = mse(s, tape.constant(p.reference.s().clone()))?;
            let ma = mse(a, tape.constant(p.reference.a().clone()))?;
            loss = loss.add(ms.add(ma)?.scale(p.alpha))?;
        }
        let value = loss.value().item().expect("scalar loss");
        if !want_grad || !value.is_finite() {
            return Ok((value, Vec::new()));
        }
        let g = loss.backward()?;
        let mut grad = Vec::with_capacity(params.len());
        grad.extend_from_slice(g.get(s).expect("s is a parameter").data());
        grad.extend_from_slice(g.get(logits).expect("a is a parameter").data());
        if let Some(t) = taps {
            grad.extend_from_slice(g.get(t).expect("taps are a parameter").data());
        }
        Ok((value, grad))
    }
}

/// Fit compressed features to `target` given an externally supplied f0
/// track framed by `meta`. The target must satisfy the framing rule
/// `(T - 1) * hop <= len <= T * hop`; it is zero-padded to `T * hop`.
pub fn fit(
    target: &Waveform,
    f0: &[f64],
    meta: FrameMeta,
    init: Option<&CompressedFeatures>,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    meta.validate()?;
    if target.is_empty() {
        return Err(invalid("target waveform is empty"));
    }
    if target.sample_rate() != meta.sample_rate {
        return Err(invalid(format!(
            "target sample rate {} does not match the features' {}",
            target.sample_rate(),
            meta.sample_rate
        )));
    }
    let frames = f0.len();
    let hop = meta.hop;
    if frames == 0 || target.len() > frames * hop || target.len() < (frames - 1) * hop {
        return Err(invalid(format!(
            "target of {} samples does not fit {frames} f0 frames at hop {hop}",
            target.len()
        )));
    }
    let init = match init {
        Some(c) => {
            if c.frames() != frames || c.meta() != meta {
                return Err(invalid("initial features do not match the f0 track"));
            }
            c.clone()
        }
        None => default_init(f0, meta, cfg.mels, cfg.ap_bands, MelSpec::for_meta(meta, cfg.mels).epsilon)?,
    };
    if let Some(p) = &cfg.penalty {
        let r = &p.reference;
        if r.s().shape() != init.s().shape() || r.a().shape() != init.a().shape() {
            return Err(invalid("penalty reference shape does not match the fitted features"));
        }
    }
    let synth = SynthConfig {
        noise_seed: Some(cfg.seed),
        ..SynthConfig::for_meta(meta)
    };
    let mut samples = target.samples().to_vec();
    samples.resize(frames * hop, 0.0);
    let problem = Problem {
        target: Tensor::from_vec(samples),
        exc: Excitation::new(f0, &synth)?,
        basis: MelBasis::new(MelSpec::for_meta(meta, init.mels()))?,
        synth,
        frames,
        mels: init.mels(),
        bands: init.bands(),
        voiced: voicing_mask(f0, init.bands(), 1.0),
        unvoiced: voicing_mask(f0, init.bands(), 0.0),
        cfg,
    };

    let mut params: Vec<f64> = init.s().data().to_vec();
    params.extend(init.a().data().iter().map(|&p| logit(p)));
    if let Some(len) = cfg.fir_len {
        params.extend(FirPostFilter::zeros(len)?.free_taps());
    }
    let initial = params.clone();
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grad) = problem.evaluate(&params, true)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        trace.push(loss);
        adam_step(&mut params, &grad, &mut state, &cfg.adam)?;
    }
    let (final_loss, _) = problem.evaluate(&params, false)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: cfg.steps });
    }

    let ns = frames * problem.mels;
    let na = frames * problem.bands;
    let s = Tensor::new(&[frames, problem.mels], params[..ns].to_vec())?;
    let start = &initial[ns..ns + na];
    let a_data = params[ns..ns + na]
        .iter()
        .zip(start)
        .zip(init.a().data())
        .map(|((&x, &x0), &a0)| if x == x0 { a0 } else { sigmoid(x) })
        .collect();
    let a = Tensor::new(&[frames, problem.bands], a_data)?;
    let fir = match cfg.fir_len {
        Some(_) => Some(FirPostFilter::from_free_taps(params[ns + na..].to_vec())?),
        None => None,
    };
    Ok(FitResult {
        features: CompressedFeatures::new(f0.to_vec(), s, a, meta)?,
        fir,
        trace,
        final_loss,
    })
}
