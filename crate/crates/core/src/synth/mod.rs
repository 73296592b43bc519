//! Differentiable harmonic-plus-noise WORLD synthesis.
//!
//! A pulse train `e_h` and Gaussian noise `e_n` are shaped in the STFT domain
//! by the spectral envelope and aperiodicity:
//!
//! ```text
//! h  = istft((1 - ap) * sqrt(sp) * stft(e_h))
//! n  = istft(ap * sqrt(sp) * stft(e_n))
//! y0 = g_h h + g_n n
//! ```
//!
//! With a post stage, `y_d = g_0 y0 + g_P P(y0)` and
//! `y = g_d y_d + g_w (y_d * w)` for a causal FIR `w` with `w(0) = 0`.
//!
//! The excitations depend only on f0 and the seed, so they are computed once
//! ([`Excitation`]) and enter the tape as constants; gradients flow into the
//! envelope and aperiodicity only.

mod post;
mod pulse;
mod stft;

pub use post::{apply_fir, FirPostFilter, PostNet, ZeroResidual, DEFAULT_FIR_LEN};
pub use pulse::{
    active_harmonics, cumulative_phase, interpolate_f0, pulse_train, Normalization, PitchContour,
};
pub use stft::{hann, Stft};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::features::{CompressedFeatures, Features, FrameMeta, Waveform, WorldFeatures};
use crate::melcodec::{decompress_ap, MelBasis, MelSpec};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_F_MIN: f64 = 71.0;

/// Mixing gains; all default to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    /// `g_h`, harmonic branch.
    pub harmonic: f64,
    /// `g_n`, noise branch.
    pub noise: f64,
    /// `g_0`, dry signal into the post stage.
    pub dry: f64,
    /// `g_P`, post-network residual.
    pub postnet: f64,
    /// `g_d`, direct path around the FIR.
    pub direct: f64,
    /// `g_w`, FIR path.
    pub fir: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            harmonic: 1.0,
            noise: 1.0,
            dry: 1.0,
            postnet: 1.0,
            direct: 1.0,
            fir: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub f_min: f64,
    /// Harmonic count `K`.
    pub harmonics: usize,
    pub gains: Gains,
    /// `None` draws the noise seed from the OS.
    pub noise_seed: Option<u64>,
    pub normalization: Normalization,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::new(22050, 1024, 256)
    }
}

impl SynthConfig {
    /// Config with `f_min = 71 Hz`, `K = floor((fs / 2) / f_min)`, unit gains
    /// and seed 0.
    pub fn new(sample_rate: u32, fft_size: usize, hop: usize) -> Self {
        Self {
            sample_rate,
            fft_size,
            hop,
            f_min: DEFAULT_F_MIN,
            harmonics: harmonics_for(sample_rate, DEFAULT_F_MIN),
            gains: Gains::default(),
            noise_seed: Some(0),
            normalization: Normalization::default(),
        }
    }

    pub fn for_meta(meta: FrameMeta) -> Self {
        Self::new(meta.sample_rate, meta.fft_size, meta.hop)
    }

    /// Sets `f_min` and recomputes `K`.
    pub fn with_f_min(mut self, f_min: f64) -> Self {
        self.f_min = f_min;
        self.harmonics = harmonics_for(self.sample_rate, f_min);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        Stft::new(self.fft_size, self.hop)?;
        if !(self.f_min > 0.0 && self.f_min.is_finite()) {
            return Err(invalid(format!("f_min {} must be positive", self.f_min)));
        }
        if self.harmonics == 0 {
            return Err(invalid("harmonic count must be at least 1"));
        }
        let g = self.gains;
        for (name, v) in [
            ("harmonic", g.harmonic),
            ("noise", g.noise),
            ("dry", g.dry),
            ("postnet", g.postnet),
            ("direct", g.direct),
            ("fir", g.fir),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("{name} gain is not finite")));
            }
        }
        Ok(())
    }

    pub fn stft(&self) -> Result<Stft> {
        Stft::new(self.fft_size, self.hop)
    }

    fn check_meta(&self, meta: FrameMeta) -> Result<()> {
        if meta.sample_rate != self.sample_rate
            || meta.hop != self.hop
            || meta.fft_size != self.fft_size
        {
            return Err(invalid(format!(
                "features (fs {}, hop {}, N {}) do not match the synthesizer (fs {}, hop {}, N {})",
                meta.sample_rate, meta.hop, meta.fft_size, self.sample_rate, self.hop, self.fft_size
            )));
        }
        Ok(())
    }
}

/// `floor((fs / 2) / f_min)`.
pub fn harmonics_for(sample_rate: u32, f_min: f64) -> usize {
    (sample_rate as f64 / 2.0 / f_min).floor() as usize
}

/// Standard normal noise of length `len` from a seeded ChaCha8 stream.
pub fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// The constant excitations for one f0 track and their STFTs.
#[derive(Debug, Clone)]
pub struct Excitation {
    pub contour: PitchContour,
    pub pulse: Vec<f64>,
    pub noise: Vec<f64>,
    pulse_spec: Tensor,
    noise_spec: Tensor,
    frames: usize,
}

impl Excitation {
    /// Excitations for `f0` frames; output length is `frames * hop`.
    pub fn new(f0: &[f64], cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        if f0.is_empty() {
            return Err(invalid("f0 track is empty"));
        }
        if let Some(t) = f0.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid(format!("f0 at frame {t} is {}", f0[t])));
        }
        let frames = f0.len();
        let len = frames * cfg.hop;
        let fs = cfg.sample_rate as f64;
        let contour = interpolate_f0(f0, cfg.hop, len);
        let pulse = pulse_train(&contour, fs, cfg.harmonics, cfg.normalization);
        let seed = cfg.noise_seed.unwrap_or_else(rand::random);
        let noise = noise(len, seed);
        let stft = cfg.stft()?;
        let pulse_spec = stft.forward_frames_tensor(&pulse, frames)?;
        let noise_spec = stft.forward_frames_tensor(&noise, frames)?;
        Ok(Self {
            contour,
            pulse,
            noise,
            pulse_spec,
            noise_spec,
            frames,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.pulse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulse.is_empty()
    }

    /// `stft(e_h)`, `[2, frames, bins]`.
    pub fn pulse_spectrum(&self) -> &Tensor {
        &self.pulse_spec
    }

    /// `stft(e_n)`, `[2, frames, bins]`.
    pub fn noise_spectrum(&self) -> &Tensor {
        &self.noise_spec
    }
}

/// Optional post stage on the tape: trainable or fixed FIR taps `w(1..L)`
/// and a residual network.
pub struct PostGraph<'p, 't> {
    pub free_taps: Var<'t>,
    pub net: &'p dyn PostNet,
}

fn check_envelope(exc: &Excitation, cfg: &SynthConfig, name: &str, v: &Var<'_>) -> Result<()> {
    let want = [exc.frames(), cfg.fft_size / 2 + 1];
    if v.shape() != want {
        return Err(invalid(format!(
            "{name} has shape {:?}, expected {want:?}",
            v.shape()
        )));
    }
    Ok(())
}

/// Harmonic branch `istft((1 - ap) * amp * stft(e_h))` with `amp = sqrt(sp)`.
pub fn synth_harmonic<'t>(
    exc: &Excitation,
    amp: Var<'t>,
    ap: Var<'t>,
    cfg: &SynthConfig,
) -> Result<Var<'t>> {
    check_envelope(exc, cfg, "envelope", &amp)?;
    check_envelope(exc, cfg, "aperiodicity", &ap)?;
    let tape = amp.tape();
    let gain = ap.neg().offset(1.0).mul(amp)?;
    let spec = tape.constant(exc.pulse_spectrum().clone()).mul(gain)?;
    cfg.stft()?.inverse(spec, exc.len())
}

/// Noise branch `istft(ap * amp * stft(e_n))` with `amp = sqrt(sp)`.
pub fn synth_noise<'t>(
    exc: &Excitation,
    amp: Var<'t>,
    ap: Var<'t>,
    cfg: &SynthConfig,
) -> Result<Var<'t>> {
    check_envelope(exc, cfg, "envelope", &amp)?;
    check_envelope(exc, cfg, "aperiodicity", &ap)?;
    let tape = amp.tape();
    let gain = ap.mul(amp)?;
    let spec = tape.constant(exc.noise_spectrum().clone()).mul(gain)?;
    cfg.stft()?.inverse(spec, exc.len())
}

/// Full mix from an amplitude envelope and aperiodicity (both frames x bins).
pub fn render<'t>(
    exc: &Excitation,
    amp: Var<'t>,
    ap: Var<'t>,
    cfg: &SynthConfig,
    post: Option<PostGraph<'_, 't>>,
) -> Result<Var<'t>> {
    let g = cfg.gains;
    let h = synth_harmonic(exc, amp, ap, cfg)?;
    let n = synth_noise(exc, amp, ap, cfg)?;
    let y0 = h.scale(g.harmonic).add(n.scale(g.noise))?;
    let Some(post) = post else {
        return Ok(y0);
    };
    let yd = y0
        .scale(g.dry)
        .add(post.net.apply(y0)?.scale(g.postnet))?;
    let yw = apply_fir(yd, post.free_taps)?;
    Ok(yd.scale(g.direct).add(yw.scale(g.fir))?)
}

/// [`render`] from compressed features `s` (frames x mels) and `a`
/// (frames x bands).
pub fn render_compressed<'t>(
    exc: &Excitation,
    s: Var<'t>,
    a: Var<'t>,
    basis: &MelBasis,
    cfg: &SynthConfig,
    post: Option<PostGraph<'_, 't>>,
) -> Result<Var<'t>> {
    let amp = basis.decompress_amplitude(s)?;
    let ap = decompress_ap(a, cfg.fft_size / 2 + 1)?;
    render(exc, amp, ap, cfg, post)
}

/// Synthesize raw or compressed features. Compressed features are decoded
/// with the default mel basis for their shape.
pub fn synthesize(
    features: &Features,
    cfg: &SynthConfig,
    post: Option<&FirPostFilter>,
) -> Result<Waveform> {
    synthesize_with(features, cfg, post, &ZeroResidual)
}

/// [`synthesize`] with a custom post network (used only when `post` is set).
pub fn synthesize_with(
    features: &Features,
    cfg: &SynthConfig,
    post: Option<&FirPostFilter>,
    net: &dyn PostNet,
) -> Result<Waveform> {
    match features {
        Features::Raw(f) => synthesize_raw(f, cfg, post, net),
        Features::Compressed(c) => {
            let basis = MelBasis::new(MelSpec::for_meta(c.meta(), c.mels()))?;
            synthesize_compressed(c, &basis, cfg, post, net)
        }
    }
}

pub fn synthesize_raw(
    features: &WorldFeatures,
    cfg: &SynthConfig,
    post: Option<&FirPostFilter>,
    net: &dyn PostNet,
) -> Result<Waveform> {
    cfg.check_meta(features.meta())?;
    let exc = Excitation::new(features.f0(), cfg)?;
    let tape = Tape::new();
    let amp = tape.constant(features.sp().clone()).sqrt()?;
    let ap = tape.constant(features.ap().clone());
    let post = post.map(|p| PostGraph {
        free_taps: tape.constant(p.free_tensor()),
        net,
    });
    let y = render(&exc, amp, ap, cfg, post)?;
    Waveform::new(y.value().to_vec(), cfg.sample_rate)
}

pub fn synthesize_compressed(
    features: &CompressedFeatures,
    basis: &MelBasis,
    cfg: &SynthConfig,
    post: Option<&FirPostFilter>,
    net: &dyn PostNet,
) -> Result<Waveform> {
    cfg.check_meta(features.meta())?;
    let exc = Excitation::new(features.f0(), cfg)?;
    let tape = Tape::new();
    let s = tape.constant(features.s().clone());
    let a = tape.constant(features.a().clone());
    let post = post.map(|p| PostGraph {
        free_taps: tape.constant(p.free_tensor()),
        net,
    });
    let y = render_compressed(&exc, s, a, basis, cfg, post)?;
    Waveform::new(y.value().to_vec(), cfg.sample_rate)
}

/// Constrained-manifold target: raw features synthesized with unit gains,
/// no post stage and the config's seed (0 when unset).
pub fn oracle_target(features: &WorldFeatures, cfg: &SynthConfig) -> Result<Waveform> {
    let cfg = SynthConfig {
        gains: Gains::default(),
        noise_seed: Some(cfg.noise_seed.unwrap_or(0)),
        ..cfg.clone()
    };
    synthesize_raw(features, &cfg, None, &ZeroResidual)
}
