//! Centered Hann STFT and its least-squares overlap-add inverse.
//!
//! Frame `t` is centered on sample `t * hop`; samples outside the signal read
//! as zero. Spectra use the planar layout `[2, frames, N/2 + 1]`.

use crate::error::{invalid, Result};
use crate::features::frame_count;
use crate::tensor::{FrameSpec, Tensor, Var};

/// Smallest window-power sum used when normalizing the overlap-add.
const WSS_FLOOR: f64 = 1e-8;

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Stft {
    n: usize,
    hop: usize,
    window: Tensor,
}

impl Stft {
    pub fn new(n: usize, hop: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(invalid(format!("fft size {n} is not a power of two")));
        }
        if hop == 0 || hop > n / 2 || n % hop != 0 {
            return Err(invalid(format!(
                "hop {hop} must divide fft size {n} and be at most {}",
                n / 2
            )));
        }
        Ok(Self {
            n,
            hop,
            window: Tensor::from_vec(hann(n)),
        })
    }

    pub fn fft_size(&self) -> usize {
        self.n
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Default frame count for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        frame_count(len, self.hop)
    }

    /// A signal of `len` samples can be paired with `frames` frames when
    /// `(frames - 1) * hop <= len <= frames * hop`.
    pub fn check_frames(&self, len: usize, frames: usize) -> Result<()> {
        if frames == 0 || (frames - 1) * self.hop > len || len > frames * self.hop {
            return Err(invalid(format!(
                "{frames} frames at hop {} do not match a signal of {len} samples \
                 (expected {} frames)",
                self.hop,
                self.frames_for(len)
            )));
        }
        Ok(())
    }

    fn spec(&self, len: usize, frames: usize) -> FrameSpec {
        FrameSpec {
            frame_len: self.n,
            hop: self.hop,
            frames,
            offset: -((self.n / 2) as isize),
            signal_len: len,
        }
    }

    /// STFT of a 1-D signal with an explicit frame count.
    pub fn forward_frames<'t>(&self, x: Var<'t>, frames: usize) -> Result<Var<'t>> {
        let len = x.len();
        self.check_frames(len, frames)?;
        let w = x.tape().constant(self.window.clone());
        let framed = x.frame(self.spec(len, frames))?.mul(w)?;
        Ok(framed.rfft(self.n)?)
    }

    /// STFT of a 1-D signal with `floor(len / hop) + 1` frames.
    pub fn forward<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let frames = self.frames_for(x.len());
        self.forward_frames(x, frames)
    }

    /// Inverse STFT to `len` samples: windowed overlap-add divided by the
    /// summed squared window, which inverts [`Stft::forward`] exactly.
    pub fn inverse<'t>(&self, spec: Var<'t>, len: usize) -> Result<Var<'t>> {
        let shape = spec.shape();
        if shape.len() != 3 || shape[0] != 2 || shape[2] != self.bins() {
            return Err(invalid(format!(
                "istft expects [2, frames, {}], got {shape:?}",
                self.bins()
            )));
        }
        let frames = shape[1];
        self.check_frames(len, frames)?;
        let fs = self.spec(len, frames);
        let tape = spec.tape();
        let w = tape.constant(self.window.clone());
        let inv = tape.constant(Tensor::from_vec(self.inverse_window_sum(&fs)));
        let frames = spec.irfft(self.n)?.mul(w)?;
        Ok(frames.overlap_add(fs)?.mul(inv)?)
    }

    fn inverse_window_sum(&self, fs: &FrameSpec) -> Vec<f64> {
        let w = self.window.data();
        let mut acc = vec![0.0; fs.signal_len];
        for t in 0..fs.frames {
            let start = (t * fs.hop) as isize + fs.offset;
            for (j, &wj) in w.iter().enumerate() {
                let p = start + j as isize;
                if p >= 0 && (p as usize) < fs.signal_len {
                    acc[p as usize] += wj * wj;
                }
            }
        }
        acc.into_iter().map(|v| 1.0 / v.max(WSS_FLOOR)).collect()
    }

    pub fn forward_tensor(&self, x: &[f64]) -> Result<Tensor> {
        let tape = crate::tensor::Tape::new();
        Ok(self.forward(tape.constant(Tensor::from_vec(x.to_vec())))?.value())
    }

    pub fn forward_frames_tensor(&self, x: &[f64], frames: usize) -> Result<Tensor> {
        let tape = crate::tensor::Tape::new();
        Ok(self
            .forward_frames(tape.constant(Tensor::from_vec(x.to_vec())), frames)?
            .value())
    }

    pub fn inverse_tensor(&self, spec: &Tensor, len: usize) -> Result<Vec<f64>> {
        let tape = crate::tensor::Tape::new();
        Ok(self.inverse(tape.constant(spec.clone()), len)?.value().to_vec())
    }
}
