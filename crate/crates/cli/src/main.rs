//! `diffworld` command-line front end.
//!
//! Exit codes: 0 success, 1 internal error, 2 I/O or format error (including
//! usage errors), 3 validation error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffworld::Error;

#[derive(Parser)]
#[command(name = "diffworld", version, about = "Differentiable WORLD vocoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a WAV from raw or compressed features.
    Synth(SynthArgs),
    /// Compress raw features to mel envelope and aperiodicity bands.
    Compress(CompressArgs),
    /// Decompress features back to the FFT grid.
    Decompress(DecompressArgs),
    /// Re-color a waveform from one spectral envelope to another.
    ExciteTransform(ExciteArgs),
    /// Fit compressed features to a target waveform.
    Fit(FitArgs),
    /// Print the multi-resolution spectrogram loss between two WAVs.
    Loss(LossArgs),
    /// Write a log-mel spectrogram as CSV (frames x mels).
    Spectrogram(SpectrogramArgs),
}

#[derive(Args)]
struct SynthArgs {
    features: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    gain_harmonic: f64,
    #[arg(long, default_value_t = 1.0)]
    gain_noise: f64,
    #[arg(long, default_value_t = 1.0)]
    gain_dry: f64,
    #[arg(long, default_value_t = 1.0)]
    gain_fir: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// FIR taps as raw little-endian float64, including the zero w(0).
    #[arg(long)]
    fir: Option<PathBuf>,
    /// Write 32-bit float samples instead of 16-bit PCM.
    #[arg(long)]
    float: bool,
}

#[derive(Args)]
struct CompressArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = diffworld::melcodec::DEFAULT_MELS)]
    mels: usize,
    #[arg(long, default_value_t = diffworld::melcodec::DEFAULT_AP_BANDS)]
    ap_bands: usize,
}

#[derive(Args)]
struct DecompressArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ExciteArgs {
    input: PathBuf,
    #[arg(long)]
    src_env: PathBuf,
    #[arg(long)]
    tgt_env: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Roundtrip both envelopes through the mel codec first.
    #[arg(long)]
    use_decompressed: bool,
    #[arg(long, default_value_t = diffworld::melcodec::DEFAULT_MELS)]
    mels: usize,
    #[arg(long)]
    float: bool,
}

#[derive(Args)]
struct FitArgs {
    target: PathBuf,
    /// Features file supplying the f0 track and framing.
    #[arg(long)]
    f0: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-step loss as CSV with a `step,msl` header.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = diffworld::melcodec::DEFAULT_MELS)]
    mels: usize,
    #[arg(long, default_value_t = diffworld::melcodec::DEFAULT_AP_BANDS)]
    ap_bands: usize,
    #[arg(long, default_value_t = 6)]
    scales: usize,
    /// Also fit FIR taps of this length and write them here.
    #[arg(long, requires = "fir_len")]
    fir_out: Option<PathBuf>,
    #[arg(long, requires = "fir_out")]
    fir_len: Option<usize>,
}

#[derive(Args)]
struct LossArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value_t = 6)]
    scales: usize,
}

#[derive(Args)]
struct SpectrogramArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = diffworld::melcodec::DEFAULT_MELS)]
    mels: usize,
    #[arg(long, default_value_t = 1024)]
    fft_size: usize,
    #[arg(long, default_value_t = 256)]
    hop: usize,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Format(_) => 2,
        Error::Validation(_) => 3,
        _ => 1,
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("DIFFWORLD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("DIFFWORLD_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("diffworld: {msg}");
        return ExitCode::from(3);
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Compress(a) => commands::compress(a),
        Command::Decompress(a) => commands::decompress(a),
        Command::ExciteTransform(a) => commands::excite_transform(a),
        Command::Fit(a) => commands::fit(a),
        Command::Loss(a) => commands::loss(a),
        Command::Spectrogram(a) => commands::spectrogram(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("diffworld: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
