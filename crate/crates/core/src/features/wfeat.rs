//! WFEAT binary feature files.
//!
//! Layout (little-endian): the magic `WFEA`, eight `u32` header fields
//! (version, sample rate, hop, fft size, frames, kind, mels-or-bins, bands),
//! then `f64` payload arrays in field order: `f0`, `sp | s`, `ap | a`.
//! `kind` is 0 for raw features and 1 for compressed ones; `bands` is 0 for
//! raw files.

use std::path::Path;

use super::types::{CompressedFeatures, Features, FrameMeta, WorldFeatures};
use crate::error::{format_err, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WFEA";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 8 * 4;

const KIND_RAW: u32 = 0;
const KIND_COMPRESSED: u32 = 1;

pub fn encode(features: &Features) -> Vec<u8> {
    let meta = features.meta();
    let (kind, width, bands, mid, last) = match features {
        Features::Raw(f) => (KIND_RAW, f.bins(), 0, f.sp(), f.ap()),
        Features::Compressed(c) => (KIND_COMPRESSED, c.mels(), c.bands(), c.s(), c.a()),
    };
    let f0 = features.f0();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (f0.len() + mid.len() + last.len()));
    out.extend_from_slice(MAGIC);
    for field in [
        VERSION,
        meta.sample_rate,
        meta.hop as u32,
        meta.fft_size as u32,
        f0.len() as u32,
        kind,
        width as u32,
        bands as u32,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    for v in f0.iter().chain(mid.data()).chain(last.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Features> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format_err("not a WFEAT file (bad magic)"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err("truncated WFEAT header"));
    }
    let field = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
    };
    let version = field(0);
    if version != VERSION {
        return Err(format_err(format!("unsupported WFEAT version {version}")));
    }
    let meta = FrameMeta::new(field(1), field(2) as usize, field(3) as usize)?;
    let frames = field(4) as usize;
    let kind = field(5);
    let width = field(6) as usize;
    let bands = field(7) as usize;
    let last_width = match kind {
        KIND_RAW => {
            if bands != 0 {
                return Err(format_err("raw WFEAT file must have 0 aperiodicity bands"));
            }
            width
        }
        KIND_COMPRESSED => bands,
        other => return Err(format_err(format!("unknown WFEAT kind {other}"))),
    };

    let count = frames
        .checked_mul(1 + width + last_width)
        .ok_or_else(|| format_err("WFEAT header dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    let expected = count * 8;
    if payload.len() < expected {
        return Err(format_err(format!(
            "truncated WFEAT payload: expected {expected} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(format_err(format!(
            "WFEAT payload has {} trailing bytes",
            payload.len() - expected
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let f0 = take(frames);
    let mid = Tensor::new(&[frames, width], take(frames * width))?;
    let last = Tensor::new(&[frames, last_width], take(frames * last_width))?;
    Ok(match kind {
        KIND_RAW => WorldFeatures::new(f0, mid, last, meta)?.into(),
        _ => CompressedFeatures::new(f0, mid, last, meta)?.into(),
    })
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Features> {
    decode(&std::fs::read(path)?)
}

pub fn write_features(path: impl AsRef<Path>, features: &Features) -> Result<()> {
    std::fs::write(path, encode(features))?;
    Ok(())
}
