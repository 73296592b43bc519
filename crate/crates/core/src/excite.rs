//! Source-excitation processing in the STFT domain: divide out a source
//! envelope, optionally impose another, and resynthesize.

use crate::error::{invalid, Result};
use crate::features::Waveform;
use crate::melcodec::MelBasis;
use crate::synth::Stft;
use crate::tensor::{Tape, Tensor, Var};

/// Envelope floor applied before division and square roots.
pub const ENVELOPE_FLOOR: f64 = 1e-10;
pub const MIN_RATIO: f64 = 1e-6;
pub const MAX_RATIO: f64 = 1e6;

fn check_envelope(stft: &Stft, len: usize, sp: &Var<'_>) -> Result<usize> {
    let shape = sp.shape();
    if shape.len() != 2 || shape[1] != stft.bins() {
        return Err(invalid(format!(
            "envelope has shape {shape:?}, expected [frames, {}]",
            stft.bins()
        )));
    }
    stft.check_frames(len, shape[0])?;
    Ok(shape[0])
}

/// `E = stft(x) / sqrt(max(sp, floor))`, `[2, frames, bins]`.
pub fn extract_excitation<'t>(x: Var<'t>, sp: Var<'t>, stft: &Stft) -> Result<Var<'t>> {
    let frames = check_envelope(stft, x.len(), &sp)?;
    let spec = stft.forward_frames(x, frames)?;
    Ok(spec.div(sp.clamp_min(ENVELOPE_FLOOR).sqrt()?)?)
}

/// `y = istft(sqrt(sp) * E)` with `len` output samples.
pub fn reconstruct<'t>(e: Var<'t>, sp: Var<'t>, stft: &Stft, len: usize) -> Result<Var<'t>> {
    check_envelope(stft, len, &sp)?;
    stft.inverse(e.mul(sp.sqrt()?)?, len)
}

/// `y = istft(sqrt(r) * stft(x))` with
/// `r = clamp(max(sp_tgt, floor) / max(sp_src, floor), 1e-6, 1e6)`.
pub fn transform_formants<'t>(
    x: Var<'t>,
    sp_src: Var<'t>,
    sp_tgt: Var<'t>,
    stft: &Stft,
) -> Result<Var<'t>> {
    let frames = check_envelope(stft, x.len(), &sp_src)?;
    if sp_tgt.shape() != sp_src.shape() {
        return Err(invalid(format!(
            "target envelope shape {:?} differs from source {:?}",
            sp_tgt.shape(),
            sp_src.shape()
        )));
    }
    let ratio = sp_tgt
        .clamp_min(ENVELOPE_FLOOR)
        .div(sp_src.clamp_min(ENVELOPE_FLOOR))?
        .clamp(MIN_RATIO, MAX_RATIO)
        .sqrt()?;
    let spec = stft.forward_frames(x, frames)?.mul(ratio)?;
    stft.inverse(spec, x.len())
}

/// Envelope transform on concrete data. With `codec`, both envelopes are
/// first replaced by their compress/decompress roundtrip.
pub fn transform_waveform(
    x: &Waveform,
    sp_src: &Tensor,
    sp_tgt: &Tensor,
    stft: &Stft,
    codec: Option<&MelBasis>,
) -> Result<Waveform> {
    let tape = Tape::new();
    let xv = tape.constant(Tensor::from_vec(x.samples().to_vec()));
    let (mut src, mut tgt) = (tape.constant(sp_src.clone()), tape.constant(sp_tgt.clone()));
    if let Some(basis) = codec {
        src = basis.decompress(basis.compress(src)?)?;
        tgt = basis.decompress(basis.compress(tgt)?)?;
    }
    let y = transform_formants(xv, src, tgt, stft)?;
    Waveform::new(y.value().to_vec(), x.sample_rate())
}
