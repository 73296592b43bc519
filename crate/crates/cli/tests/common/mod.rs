#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffworld::features::{write_features, write_wav, Features, FrameMeta, WavEncoding, Waveform, WorldFeatures};
use diffworld::tensor::Tensor;

pub const FS: u32 = 8000;
pub const N: usize = 64;
pub const HOP: usize = 16;

pub fn meta() -> FrameMeta {
    FrameMeta::new(FS, HOP, N).unwrap()
}

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffworld"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn run_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffworld"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Glide with an unvoiced gap, two formants and a rising aperiodicity.
pub fn features_with(meta: FrameMeta, frames: usize, scale: f64, ap_const: Option<f64>) -> WorldFeatures {
    let (fs, n) = (meta.sample_rate as f64, meta.fft_size);
    let bins = n / 2 + 1;
    let f0: Vec<f64> = (0..frames)
        .map(|i| if (frames / 2..frames / 2 + 3).contains(&i) { 0.0 } else { 140.0 + 80.0 * i as f64 / frames as f64 })
        .collect();
    let (mut sp, mut ap) = (Vec::new(), Vec::new());
    for i in 0..frames {
        for k in 0..bins {
            let hz = k as f64 * fs / n as f64;
            let g = |c: f64, w: f64| (-(hz - c).powi(2) / (2.0 * w * w)).exp();
            sp.push(scale * (1e-4 + g(600.0 + 300.0 * i as f64 / frames as f64, 200.0) + 0.5 * g(2000.0, 400.0)));
            ap.push(ap_const.unwrap_or(0.05 + 0.9 * hz / (fs / 2.0)));
        }
    }
    WorldFeatures::new(
        f0,
        Tensor::new(&[frames, bins], sp).unwrap(),
        Tensor::new(&[frames, bins], ap).unwrap(),
        meta,
    )
    .unwrap()
}

pub fn features(frames: usize) -> WorldFeatures {
    features_with(meta(), frames, 1.0, None)
}

pub fn save_features(dir: &Path, name: &str, f: WorldFeatures) -> PathBuf {
    let p = dir.join(name);
    write_features(&p, &Features::Raw(f)).unwrap();
    p
}

pub fn save_wav(dir: &Path, name: &str, samples: Vec<f64>, rate: u32) -> PathBuf {
    let p = dir.join(name);
    write_wav(&p, &Waveform::new(samples, rate).unwrap(), WavEncoding::Float32).unwrap();
    p
}

pub fn noise_clip(seed: u64, len: usize) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| r.gen_range(-0.5..0.5)).collect()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
