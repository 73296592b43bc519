//! Compression of WORLD features: the spectral envelope becomes a log mel
//! spectrogram `s = log10(sqrt(sp) M^T + eps)`, and aperiodicity is linearly
//! resampled onto a coarse uniform frequency grid.
//!
//! Features are stored frames-by-bins, so the mel matrix `M` (mels x bins)
//! and its clamped pseudo-inverse act from the right as transposes.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::features::{CompressedFeatures, FrameMeta, WorldFeatures};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_MELS: usize = 80;
pub const DEFAULT_AP_BANDS: usize = 16;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Singular values below this fraction of the largest are dropped from the
/// pseudo-inverse.
const PINV_RCOND: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// How the pseudo-inverse is made nonnegative during decompression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InverseMode {
    /// `max(pinv(M) x, 0)`: clamp the reconstructed amplitude.
    #[default]
    ClampOutput,
    /// `max(pinv(M), 0) x`: clamp the matrix entries. This inflates smooth
    /// envelopes by roughly 1.5x in amplitude for triangular mel bases.
    ClampMatrix,
}

/// Parameters of a mel filterbank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelSpec {
    pub mels: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
    /// Lower band edge in Hz.
    pub f_lo: f64,
    /// Upper band edge in Hz; `None` means Nyquist.
    pub f_hi: Option<f64>,
    pub epsilon: f64,
    pub inverse: InverseMode,
}

impl MelSpec {
    pub fn new(mels: usize, fft_size: usize, sample_rate: u32) -> Self {
        Self {
            mels,
            fft_size,
            sample_rate,
            f_lo: 0.0,
            f_hi: None,
            epsilon: DEFAULT_EPSILON,
            inverse: InverseMode::default(),
        }
    }

    pub fn for_meta(meta: FrameMeta, mels: usize) -> Self {
        Self::new(mels, meta.fft_size, meta.sample_rate)
    }
}

/// Triangular HTK mel filterbank with unit row sums and its pseudo-inverse.
#[derive(Debug, Clone)]
pub struct MelBasis {
    spec: MelSpec,
    edges_hz: Vec<f64>,
    /// `M^T`, bins x mels.
    forward_t: Tensor,
    /// `pinv(M)^T`, mels x bins.
    pinv_t: Tensor,
    /// Matrix used by [`MelBasis::decompress_amplitude`], mels x bins.
    inverse_t: Tensor,
}

impl MelBasis {
    pub fn new(spec: MelSpec) -> Result<Self> {
        let nyquist = spec.sample_rate as f64 / 2.0;
        let f_hi = spec.f_hi.unwrap_or(nyquist);
        if spec.mels == 0 {
            return Err(invalid("mel basis needs at least one band"));
        }
        if spec.fft_size < 2 || !spec.fft_size.is_power_of_two() {
            return Err(invalid(format!("fft size {} is not a power of two", spec.fft_size)));
        }
        if !(spec.f_lo >= 0.0 && spec.f_lo < f_hi && f_hi <= nyquist) {
            return Err(invalid(format!(
                "mel band range [{}, {f_hi}] Hz must lie within [0, {nyquist}]",
                spec.f_lo
            )));
        }
        if !(spec.epsilon >= 0.0 && spec.epsilon.is_finite()) {
            return Err(invalid(format!("epsilon {} must be finite and >= 0", spec.epsilon)));
        }

        let bins = spec.fft_size / 2 + 1;
        let (mel_lo, mel_hi) = (hz_to_mel(spec.f_lo), hz_to_mel(f_hi));
        let step = (mel_hi - mel_lo) / (spec.mels + 1) as f64;
        let edges_hz: Vec<f64> = (0..spec.mels + 2)
            .map(|i| mel_to_hz(mel_lo + step * i as f64))
            .collect();
        let bin_hz = spec.sample_rate as f64 / spec.fft_size as f64;

        let mut m = DMatrix::<f64>::zeros(spec.mels, bins);
        for band in 0..spec.mels {
            let (lo, mid, hi) = (edges_hz[band], edges_hz[band + 1], edges_hz[band + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                m[(band, k)] = w;
            }
            let total: f64 = m.row(band).sum();
            if total <= 0.0 {
                return Err(invalid(format!(
                    "mel band {band} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; \
                     use fewer mels or a larger fft size"
                )));
            }
            m.row_mut(band).unscale_mut(total);
        }

        let svd = m.clone().svd(true, true);
        let sigma_max = svd.singular_values.max();
        let pinv = svd
            .pseudo_inverse(PINV_RCOND * sigma_max)
            .map_err(|e| invalid(format!("mel pseudo-inverse failed: {e}")))?;

        // nalgebra is column-major, so the storage of an r x c matrix is the
        // row-major data of its c x r transpose.
        let forward_t = Tensor::new(&[bins, spec.mels], m.as_slice().to_vec())?;
        let pinv_t = Tensor::new(&[spec.mels, bins], pinv.as_slice().to_vec())?;
        let inverse_t = match spec.inverse {
            InverseMode::ClampOutput => pinv_t.clone(),
            InverseMode::ClampMatrix => clamp_nonneg(&pinv_t),
        };
        Ok(Self {
            spec,
            edges_hz,
            forward_t,
            pinv_t,
            inverse_t,
        })
    }

    pub fn spec(&self) -> MelSpec {
        self.spec
    }

    pub fn mels(&self) -> usize {
        self.spec.mels
    }

    pub fn bins(&self) -> usize {
        self.spec.fft_size / 2 + 1
    }

    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon
    }

    /// `mels + 2` band edges in Hz; band `m` spans `edges[m]..edges[m + 2]`.
    pub fn edges_hz(&self) -> &[f64] {
        &self.edges_hz
    }

    /// The filterbank `M`, mels x bins.
    pub fn matrix(&self) -> Tensor {
        let (bins, mels) = (self.bins(), self.mels());
        let d = self.forward_t.data();
        let data = (0..mels)
            .flat_map(|m| (0..bins).map(move |k| d[k * mels + m]))
            .collect();
        Tensor::new(&[mels, bins], data).expect("shape")
    }

    /// `pinv(M)`, bins x mels.
    pub fn pinv(&self) -> Tensor {
        let (bins, mels) = (self.bins(), self.mels());
        let d = self.pinv_t.data();
        let data = (0..bins)
            .flat_map(|k| (0..mels).map(move |m| d[m * bins + k]))
            .collect();
        Tensor::new(&[bins, mels], data).expect("shape")
    }

    /// `max(pinv(M), 0)`, bins x mels.
    pub fn pinv_clamped(&self) -> Tensor {
        clamp_nonneg(&self.pinv())
    }

    /// `s = log10(sqrt(sp) M^T + eps)` for `sp` of shape frames x bins.
    pub fn compress<'t>(&self, sp: Var<'t>) -> Result<Var<'t>> {
        let mt = sp.tape().constant(self.forward_t.clone());
        Ok(sp.sqrt()?.matmul(mt)?.offset(self.epsilon()).log10()?)
    }

    /// Decompressed amplitude envelope, the square root of the decompressed
    /// power envelope: `max((10^s - eps) P^T, 0)` with `P` chosen by
    /// [`InverseMode`].
    pub fn decompress_amplitude<'t>(&self, s: Var<'t>) -> Result<Var<'t>> {
        let pt = s.tape().constant(self.inverse_t.clone());
        let lin = s.scale(std::f64::consts::LN_10).exp().offset(-self.epsilon());
        Ok(lin.matmul(pt)?.clamp_min(0.0))
    }

    /// Decompressed power envelope `sp†`.
    pub fn decompress<'t>(&self, s: Var<'t>) -> Result<Var<'t>> {
        Ok(self.decompress_amplitude(s)?.square())
    }

    pub fn compress_sp(&self, sp: &Tensor) -> Result<Tensor> {
        if let Some(i) = sp.data().iter().position(|&v| !(v >= 0.0)) {
            let cols = sp.shape().last().copied().unwrap_or(1).max(1);
            return Err(invalid(format!(
                "sp at frame {}, bin {} is {}; must be >= 0",
                i / cols,
                i % cols,
                sp.data()[i]
            )));
        }
        let tape = Tape::new();
        Ok(self.compress(tape.constant(sp.clone()))?.value())
    }

    pub fn decompress_sp(&self, s: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(self.decompress(tape.constant(s.clone()))?.value())
    }
}

/// Resample each row of `ap` (frames x bins) onto `bands` uniform points
/// spanning 0 Hz to Nyquist.
pub fn compress_ap<'t>(ap: Var<'t>, bands: usize) -> Result<Var<'t>> {
    Ok(ap.resample_uniform(bands)?)
}

/// Inverse grid change of [`compress_ap`]: rows of `a` back onto `bins` points.
pub fn decompress_ap<'t>(a: Var<'t>, bins: usize) -> Result<Var<'t>> {
    Ok(a.resample_uniform(bins)?)
}

/// Compress raw features with `basis` and `bands` aperiodicity components.
pub fn compress_features(
    features: &WorldFeatures,
    basis: &MelBasis,
    bands: usize,
) -> Result<CompressedFeatures> {
    check_basis(features.meta(), basis)?;
    let tape = Tape::new();
    let s = basis.compress(tape.constant(features.sp().clone()))?.value();
    let a = compress_ap(tape.constant(features.ap().clone()), bands)?.value();
    CompressedFeatures::new(features.f0().to_vec(), s, a, features.meta())
}

/// Decompress to raw features on the basis' FFT grid.
pub fn decompress_features(
    features: &CompressedFeatures,
    basis: &MelBasis,
) -> Result<WorldFeatures> {
    check_basis(features.meta(), basis)?;
    if features.mels() != basis.mels() {
        return Err(invalid(format!(
            "features have {} mel bands but the basis has {}",
            features.mels(),
            basis.mels()
        )));
    }
    let tape = Tape::new();
    let sp = basis.decompress(tape.constant(features.s().clone()))?.value();
    let ap = decompress_ap(tape.constant(features.a().clone()), basis.bins())?.value();
    WorldFeatures::new(features.f0().to_vec(), sp, ap, features.meta())
}

fn clamp_nonneg(t: &Tensor) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|&v| v.max(0.0)).collect()).expect("shape")
}

fn check_basis(meta: FrameMeta, basis: &MelBasis) -> Result<()> {
    let spec = basis.spec();
    if spec.fft_size != meta.fft_size || spec.sample_rate != meta.sample_rate {
        return Err(invalid(format!(
            "mel basis is for N={} at {} Hz but features are N={} at {} Hz",
            spec.fft_size, spec.sample_rate, meta.fft_size, meta.sample_rate
        )));
    }
    Ok(())
}
