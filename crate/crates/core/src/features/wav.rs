use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::types::Waveform;
use crate::error::{format_err, invalid, Error, Result};

/// PCM encoding used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    #[default]
    Int16,
    Float32,
}

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => format_err(format!("wav: {other}")),
    }
}

/// Read a mono 16-bit integer or 32-bit float WAV file.
///
/// With `expected_rate`, a file at any other sample rate is rejected.
pub fn read_wav(path: impl AsRef<Path>, expected_rate: Option<u32>) -> Result<Waveform> {
    let reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format_err(format!(
            "mono required: file has {} channels; downmix it externally",
            spec.channels
        )));
    }
    if let Some(rate) = expected_rate {
        if spec.sample_rate != rate {
            return Err(invalid(format!(
                "sample rate mismatch: file is {} Hz, expected {rate} Hz",
                spec.sample_rate
            )));
        }
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>(),
        (fmt, bits) => {
            return Err(format_err(format!(
                "unsupported WAV encoding: {bits}-bit {fmt:?} (16-bit int or 32-bit float only)"
            )))
        }
    }
    .map_err(wav_err)?;
    Waveform::new(samples, spec.sample_rate)
}

/// Write a mono WAV file. 16-bit output is clipped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform, encoding: WavEncoding) -> Result<()> {
    let (bits, format) = match encoding {
        WavEncoding::Int16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &v in wave.samples() {
        match encoding {
            WavEncoding::Int16 => {
                let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q)
            }
            WavEncoding::Float32 => writer.write_sample(v as f32),
        }
        .map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}
