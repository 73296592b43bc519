use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use diffworld::features::{
    read_features, read_wav, write_features, write_wav, Features, FrameMeta, WavEncoding, Waveform,
    WorldFeatures,
};
use diffworld::fit::{AdamConfig, FitConfig};
use diffworld::losses::{msl, MslConfig};
use diffworld::melcodec::{compress_features, decompress_features, MelBasis, MelSpec};
use diffworld::synth::{synthesize, FirPostFilter, Gains, Stft, SynthConfig};
use diffworld::tensor::{Tape, Tensor};
use diffworld::{Error, Result};

use crate::{CompressArgs, DecompressArgs, ExciteArgs, FitArgs, LossArgs, SpectrogramArgs, SynthArgs};

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn encoding(float: bool) -> WavEncoding {
    if float {
        WavEncoding::Float32
    } else {
        WavEncoding::Int16
    }
}

fn basis_for(meta: FrameMeta, mels: usize) -> Result<MelBasis> {
    MelBasis::new(MelSpec::for_meta(meta, mels))
}

/// Envelope file contents on the FFT grid; compressed files are decoded.
fn raw_envelope(features: Features) -> Result<WorldFeatures> {
    match features {
        Features::Raw(f) => Ok(f),
        Features::Compressed(c) => decompress_features(&c, &basis_for(c.meta(), c.mels())?),
    }
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let features = read_features(&args.features)?;
    let cfg = SynthConfig {
        gains: Gains {
            harmonic: args.gain_harmonic,
            noise: args.gain_noise,
            dry: args.gain_dry,
            fir: args.gain_fir,
            ..Gains::default()
        },
        noise_seed: Some(args.seed),
        ..SynthConfig::for_meta(features.meta())
    };
    // Without a taps file the post stage runs with an all-zero FIR, so only
    // the dry gain acts.
    let fir = match &args.fir {
        Some(path) => FirPostFilter::read(path)?,
        None => FirPostFilter::zeros(2)?,
    };
    let wave = synthesize(&features, &cfg, Some(&fir))?;
    write_wav(&args.output, &wave, encoding(args.float))
}

pub fn compress(args: CompressArgs) -> Result<()> {
    let raw = match read_features(&args.input)? {
        Features::Raw(f) => f,
        Features::Compressed(_) => {
            return Err(invalid(format!("{} is already compressed", args.input.display())))
        }
    };
    let basis = basis_for(raw.meta(), args.mels)?;
    let c = compress_features(&raw, &basis, args.ap_bands)?;
    write_features(&args.output, &Features::Compressed(c))
}

pub fn decompress(args: DecompressArgs) -> Result<()> {
    let c = match read_features(&args.input)? {
        Features::Compressed(c) => c,
        Features::Raw(_) => {
            return Err(invalid(format!("{} is not compressed", args.input.display())))
        }
    };
    let raw = decompress_features(&c, &basis_for(c.meta(), c.mels())?)?;
    write_features(&args.output, &Features::Raw(raw))
}

pub fn excite_transform(args: ExciteArgs) -> Result<()> {
    let src = raw_envelope(read_features(&args.src_env)?)?;
    let tgt = raw_envelope(read_features(&args.tgt_env)?)?;
    let meta = src.meta();
    if tgt.meta() != meta {
        return Err(invalid("source and target envelopes use different framing"));
    }
    let x = read_wav(&args.input, Some(meta.sample_rate))?;
    let stft = Stft::new(meta.fft_size, meta.hop)?;
    let codec = if args.use_decompressed {
        Some(basis_for(meta, args.mels)?)
    } else {
        None
    };
    let y = diffworld::excite::transform_waveform(&x, src.sp(), tgt.sp(), &stft, codec.as_ref())?;
    write_wav(&args.output, &y, encoding(args.float))
}

pub fn fit(args: FitArgs) -> Result<()> {
    let features = read_features(&args.f0)?;
    let meta = features.meta();
    let target = read_wav(&args.target, Some(meta.sample_rate))?;
    let cfg = FitConfig {
        steps: args.steps,
        adam: AdamConfig {
            learning_rate: args.lr,
            ..AdamConfig::default()
        },
        msl: MslConfig {
            scales: args.scales,
            ..MslConfig::default()
        },
        seed: args.seed,
        mels: args.mels,
        ap_bands: args.ap_bands,
        penalty: None,
        fir_len: args.fir_len,
    };
    let result = diffworld::fit::fit(&target, features.f0(), meta, None, &cfg)?;
    write_features(&args.output, &Features::Compressed(result.features))?;
    if let Some(path) = &args.trace {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "step,msl")?;
        for (step, loss) in result.trace.iter().enumerate() {
            writeln!(out, "{step},{loss}")?;
        }
        out.flush()?;
    }
    if let (Some(path), Some(fir)) = (&args.fir_out, &result.fir) {
        fir.write(path)?;
    }
    eprintln!(
        "fit: msl {:.6} -> {:.6} over {} steps",
        result.trace[0], result.final_loss, args.steps
    );
    Ok(())
}

fn load_pair(a: &Path, b: &Path) -> Result<(Waveform, Waveform)> {
    let x = read_wav(a, None)?;
    let y = read_wav(b, Some(x.sample_rate()))?;
    if x.len() != y.len() {
        return Err(invalid(format!(
            "signals differ in length: {} vs {} samples",
            x.len(),
            y.len()
        )));
    }
    Ok((x, y))
}

pub fn loss(args: LossArgs) -> Result<()> {
    let (x, y) = load_pair(&args.a, &args.b)?;
    let cfg = MslConfig {
        scales: args.scales,
        ..MslConfig::default()
    };
    let tape = Tape::new();
    let value = msl(
        tape.constant(Tensor::from_vec(x.into_samples())),
        tape.constant(Tensor::from_vec(y.into_samples())),
        &cfg,
    )?
    .value()
    .item()
    .expect("scalar loss");
    println!("{value:.6}");
    Ok(())
}

pub fn spectrogram(args: SpectrogramArgs) -> Result<()> {
    let x = read_wav(&args.input, None)?;
    let meta = FrameMeta::new(x.sample_rate(), args.hop, args.fft_size)?;
    let stft = Stft::new(args.fft_size, args.hop)?;
    let basis = basis_for(meta, args.mels)?;
    let spec = stft.forward_tensor(x.samples())?;
    // [2, frames, bins] -> |X|^2, frames x bins
    let (frames, bins) = (spec.shape()[1], spec.shape()[2]);
    let (re, im) = spec.data().split_at(frames * bins);
    let sp: Vec<f64> = re.iter().zip(im).map(|(r, i)| r * r + i * i).collect();
    let logmel = basis.compress_sp(&Tensor::new(&[frames, bins], sp)?)?;
    let mut out = BufWriter::new(File::create(&args.output)?);
    for t in 0..frames {
        let row: Vec<String> = logmel.row(t).iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}
