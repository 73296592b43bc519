//! Post-processing after the harmonic-plus-noise mix: a pluggable residual
//! network and the causal FIR filter with a structurally zero first tap.

use std::path::Path;

use crate::error::{format_err, invalid, Result};
use crate::tensor::{Tensor, Var};

pub const DEFAULT_FIR_LEN: usize = 1024;

/// Audio-to-audio residual stage `P`. Implementations must build their
/// output on the tape of the input so gradients pass through.
pub trait PostNet {
    fn apply<'t>(&self, y0: Var<'t>) -> Result<Var<'t>>;
}

/// `P(y) = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroResidual;

impl PostNet for ZeroResidual {
    fn apply<'t>(&self, y0: Var<'t>) -> Result<Var<'t>> {
        Ok(y0.scale(0.0))
    }
}

/// Causal FIR filter `w` of length `L` with `w(0) = 0`. Only taps `1..L` are
/// stored, so the constraint cannot be violated.
#[derive(Debug, Clone, PartialEq)]
pub struct FirPostFilter {
    free: Vec<f64>,
}

impl FirPostFilter {
    /// All-zero filter of length `len` (at least 2).
    pub fn zeros(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(invalid(format!("FIR length must be at least 2, got {len}")));
        }
        Ok(Self {
            free: vec![0.0; len - 1],
        })
    }

    /// From the full tap vector `w(0..L)`, which must have `w(0) == 0`.
    pub fn from_taps(taps: &[f64]) -> Result<Self> {
        match taps.first() {
            None => Err(invalid("FIR filter has no taps")),
            Some(&w0) if w0 != 0.0 => Err(invalid(format!("FIR tap w(0) must be 0, got {w0}"))),
            _ if taps.len() < 2 => Err(invalid("FIR length must be at least 2")),
            _ => {
                if let Some(i) = taps.iter().position(|v| !v.is_finite()) {
                    return Err(invalid(format!("FIR tap {i} is not finite")));
                }
                Ok(Self {
                    free: taps[1..].to_vec(),
                })
            }
        }
    }

    /// From the free taps `w(1..L)`.
    pub fn from_free_taps(free: Vec<f64>) -> Result<Self> {
        let mut taps = vec![0.0];
        taps.extend_from_slice(&free);
        Self::from_taps(&taps)
    }

    /// Unit impulse at tap `d >= 1`.
    pub fn delay(len: usize, d: usize) -> Result<Self> {
        if d == 0 || d >= len {
            return Err(invalid(format!("delay {d} must be in 1..{len}")));
        }
        let mut f = Self::zeros(len)?;
        f.free[d - 1] = 1.0;
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.free.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn free_taps(&self) -> &[f64] {
        &self.free
    }

    pub fn taps(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.free.iter().copied()).collect()
    }

    pub fn free_tensor(&self) -> Tensor {
        Tensor::from_vec(self.free.clone())
    }

    /// Raw little-endian `f64` file holding `w(0..L)`.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() % 8 != 0 {
            return Err(format_err(format!(
                "FIR taps file is {} bytes, not a multiple of 8",
                bytes.len()
            )));
        }
        let taps: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_taps(&taps)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.taps().iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Apply the free taps to `y`: `sum_{j >= 1} w(j) y[i - j]`.
pub fn apply_fir<'t>(y: Var<'t>, free_taps: Var<'t>) -> Result<Var<'t>> {
    Ok(y.causal_fir(free_taps, 1)?)
}
