use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Framing metadata shared by raw and compressed features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameMeta {
    pub sample_rate: u32,
    pub hop: usize,
    pub fft_size: usize,
}

impl FrameMeta {
    pub fn new(sample_rate: u32, hop: usize, fft_size: usize) -> Result<Self> {
        let meta = Self {
            sample_rate,
            hop,
            fft_size,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if self.hop == 0 {
            return Err(invalid("hop must be positive"));
        }
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(invalid(format!(
                "fft size {} is not a power of two",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// Spectral bins per frame, `N/2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames covering `num_samples` when frame `t` is centered on `t * hop`.
    pub fn frames_for(&self, num_samples: usize) -> usize {
        frame_count(num_samples, self.hop)
    }
}

/// `floor(num_samples / hop) + 1`.
pub fn frame_count(num_samples: usize, hop: usize) -> usize {
    num_samples / hop + 1
}

fn check_f0(f0: &[f64]) -> Result<()> {
    for (t, &v) in f0.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(invalid(format!("f0 at frame {t} is {v}; must be finite and >= 0")));
        }
    }
    Ok(())
}

fn check_matrix(name: &str, m: &Tensor, frames: usize) -> Result<usize> {
    if m.ndim() != 2 || m.shape()[0] != frames {
        return Err(invalid(format!(
            "{name} has shape {:?}, expected {frames} frames",
            m.shape()
        )));
    }
    Ok(m.shape()[1])
}

fn check_range(name: &str, m: &Tensor, lo: f64, hi: f64) -> Result<()> {
    let cols = m.shape()[1];
    for (i, &v) in m.data().iter().enumerate() {
        if !v.is_finite() || v < lo || v > hi {
            return Err(invalid(format!(
                "{name} at frame {}, bin {} is {v}; expected a finite value in [{lo}, {hi}]",
                i / cols,
                i % cols
            )));
        }
    }
    Ok(())
}

/// Overwrite every row of `m` whose frame is unvoiced with ones.
fn force_unvoiced_to_one(f0: &[f64], m: Tensor) -> Tensor {
    if f0.iter().all(|&v| v > 0.0) {
        return m;
    }
    let cols = m.shape()[1];
    let mut data = m.to_vec();
    for (t, _) in f0.iter().enumerate().filter(|(_, &v)| v == 0.0) {
        data[t * cols..(t + 1) * cols].fill(1.0);
    }
    Tensor::new(m.shape(), data).expect("shape unchanged")
}

/// Frame-rate WORLD features. Rows of `sp` and `ap` are frames.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldFeatures {
    f0: Vec<f64>,
    sp: Tensor,
    ap: Tensor,
    meta: FrameMeta,
}

impl WorldFeatures {
    /// Validates all invariants and sets `ap = 1` on unvoiced frames.
    pub fn new(f0: Vec<f64>, sp: Tensor, ap: Tensor, meta: FrameMeta) -> Result<Self> {
        meta.validate()?;
        check_f0(&f0)?;
        let frames = f0.len();
        let bins = meta.bins();
        for (name, m) in [("sp", &sp), ("ap", &ap)] {
            let cols = check_matrix(name, m, frames)?;
            if cols != bins {
                return Err(invalid(format!(
                    "{name} has {cols} bins but fft size {} implies {bins}",
                    meta.fft_size
                )));
            }
        }
        check_range("sp", &sp, 0.0, f64::INFINITY)?;
        check_range("ap", &ap, 0.0, 1.0)?;
        let ap = force_unvoiced_to_one(&f0, ap);
        Ok(Self { f0, sp, ap, meta })
    }

    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    pub fn sp(&self) -> &Tensor {
        &self.sp
    }

    pub fn ap(&self) -> &Tensor {
        &self.ap
    }

    pub fn meta(&self) -> FrameMeta {
        self.meta
    }

    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    pub fn bins(&self) -> usize {
        self.meta.bins()
    }
}

/// WORLD log mel spectrogram `s` (frames x mels) and compressed aperiodicity
/// `a` (frames x bands), with the f0 track needed to synthesize them.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedFeatures {
    f0: Vec<f64>,
    s: Tensor,
    a: Tensor,
    meta: FrameMeta,
}

impl CompressedFeatures {
    /// Validates all invariants and sets `a = 1` on unvoiced frames.
    pub fn new(f0: Vec<f64>, s: Tensor, a: Tensor, meta: FrameMeta) -> Result<Self> {
        meta.validate()?;
        check_f0(&f0)?;
        let frames = f0.len();
        let mels = check_matrix("s", &s, frames)?;
        let bands = check_matrix("a", &a, frames)?;
        if mels == 0 {
            return Err(invalid("s needs at least one mel band"));
        }
        if bands < 2 {
            return Err(invalid(format!("a needs at least two bands, got {bands}")));
        }
        check_range("s", &s, f64::NEG_INFINITY, f64::INFINITY)?;
        check_range("a", &a, 0.0, 1.0)?;
        let a = force_unvoiced_to_one(&f0, a);
        Ok(Self { f0, s, a, meta })
    }

    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    pub fn s(&self) -> &Tensor {
        &self.s
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn meta(&self) -> FrameMeta {
        self.meta
    }

    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    pub fn mels(&self) -> usize {
        self.s.shape()[1]
    }

    pub fn bands(&self) -> usize {
        self.a.shape()[1]
    }
}

/// Either kind of feature file.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Raw(WorldFeatures),
    Compressed(CompressedFeatures),
}

impl Features {
    pub fn meta(&self) -> FrameMeta {
        match self {
            Features::Raw(f) => f.meta(),
            Features::Compressed(c) => c.meta(),
        }
    }

    pub fn f0(&self) -> &[f64] {
        match self {
            Features::Raw(f) => f.f0(),
            Features::Compressed(c) => c.f0(),
        }
    }
}

impl From<WorldFeatures> for Features {
    fn from(f: WorldFeatures) -> Self {
        Features::Raw(f)
    }
}

impl From<CompressedFeatures> for Features {
    fn from(c: CompressedFeatures) -> Self {
        Features::Compressed(c)
    }
}

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
