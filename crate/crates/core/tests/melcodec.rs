mod common;

use diffworld::melcodec::{
    compress_ap, compress_features, decompress_ap, decompress_features, hz_to_mel, mel_to_hz,
    InverseMode, MelBasis, MelSpec, DEFAULT_EPSILON,
};
use diffworld::features::{FrameMeta, WorldFeatures};
use diffworld::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn basis(mels: usize, n: usize, fs: u32) -> MelBasis {
    MelBasis::new(MelSpec::new(mels, n, fs)).unwrap()
}

/// Power envelope with two formants shaped as Gaussians in log-frequency.
fn two_formant(n: usize, fs: f64, f1: f64, f2: f64) -> Vec<f64> {
    let g = |f: f64, c: f64| {
        if f <= 0.0 {
            0.0
        } else {
            (-(f / c).ln().powi(2) / (2.0 * 0.25f64.powi(2))).exp()
        }
    };
    (0..=n / 2)
        .map(|k| {
            let f = k as f64 * fs / n as f64;
            let amp = 0.01 + g(f, f1) + 0.5 * g(f, f2);
            amp * amp
        })
        .collect()
}

#[test]
fn mel_scale_roundtrips() {
    for hz in [0.0, 71.0, 700.0, 11025.0] {
        assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
    }
    assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
}

#[test]
fn basis_entries_are_nonnegative_with_unit_rows() {
    let b = basis(80, 1024, 22050);
    let m = b.matrix();
    assert_eq!(m.shape(), &[80, 513]);
    assert_eq!(b.pinv_clamped().shape(), &[513, 80]);
    assert!(m.data().iter().all(|&v| v >= 0.0));
    assert!(b.pinv_clamped().data().iter().all(|&v| v >= 0.0));
    for r in 0..80 {
        let row = m.row(r);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().any(|&v| v > 0.0));
    }
    assert_eq!(b.edges_hz().len(), 82);
    assert_eq!(b.edges_hz()[0], 0.0);
    assert!((b.edges_hz()[81] - 11025.0).abs() < 1e-9);
}

#[test]
fn pinv_is_a_right_inverse() {
    // M has full row rank, so M pinv(M) = I.
    let b = basis(20, 128, 8000);
    let (mels, bins) = (20, 65);
    let (m, p) = (b.matrix(), b.pinv());
    for i in 0..mels {
        for j in 0..mels {
            let d: f64 = (0..bins).map(|k| m.data()[i * bins + k] * p.data()[k * mels + j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((d - want).abs() < 1e-9, "({i},{j}) = {d}");
        }
    }
}

#[test]
fn clamped_matrix_mode_inflates_smooth_envelopes() {
    let spec = MelSpec { inverse: InverseMode::ClampMatrix, ..MelSpec::new(80, 1024, 22050) };
    let b = MelBasis::new(spec).unwrap();
    let sp = two_formant(1024, 22050.0, 600.0, 1800.0);
    let t = Tensor::new(&[1, 513], sp.clone()).unwrap();
    let back = b.decompress_sp(&b.compress_sp(&t).unwrap()).unwrap();
    let gain = back.data().iter().sum::<f64>() / sp.iter().sum::<f64>();
    assert!(gain > 1.5, "power gain {gain}");
}

#[test]
fn too_many_mels_for_the_grid_is_an_error() {
    let err = MelBasis::new(MelSpec::new(16, 64, 22050)).unwrap_err();
    assert!(err.to_string().contains("covers no FFT bin"), "{err}");
    assert!(MelBasis::new(MelSpec::new(16, 64, 8000)).is_ok());
}

#[test]
fn zero_envelope_compresses_to_log_epsilon_and_back_to_zero() {
    let b = basis(80, 1024, 22050);
    let s = b.compress_sp(&Tensor::zeros(&[3, 513])).unwrap();
    assert_eq!(s.shape(), &[3, 80]);
    assert!(s.data().iter().all(|&v| v == DEFAULT_EPSILON.log10()));
    let sp = b.decompress_sp(&Tensor::full(&[3, 80], DEFAULT_EPSILON.log10())).unwrap();
    assert_eq!(sp.shape(), &[3, 513]);
    assert!(sp.data().iter().all(|&v| v.abs() < 1e-30), "{:?}", &sp.data()[..4]);
}

#[test]
fn flat_envelope_gives_log_row_sums() {
    let b = basis(80, 1024, 22050);
    let s = b.compress_sp(&Tensor::ones(&[2, 513])).unwrap();
    let m = b.matrix();
    for r in 0..80 {
        let row_sum: f64 = m.row(r).iter().sum();
        let want = (row_sum + DEFAULT_EPSILON).log10();
        assert!((s.data()[r] - want).abs() < 1e-12);
        assert!((s.data()[80 + r] - want).abs() < 1e-12);
    }
}

#[test]
fn negative_sp_is_rejected() {
    let b = basis(8, 32, 8000);
    let mut sp = vec![1.0; 2 * 17];
    sp[20] = -0.1;
    let err = b.compress_sp(&Tensor::new(&[2, 17], sp).unwrap()).unwrap_err();
    assert!(err.to_string().contains("frame 1, bin 3"), "{err}");
}

#[test]
fn two_formant_envelope_roundtrips_within_five_percent() {
    let b = basis(80, 1024, 22050);
    let sp = two_formant(1024, 22050.0, 600.0, 1800.0);
    let t = Tensor::new(&[1, 513], sp.clone()).unwrap();
    let back = b.decompress_sp(&b.compress_sp(&t).unwrap()).unwrap();
    let err = common::rel_l2(back.data(), &sp);
    assert!(err <= 0.05, "relative L2 {err}");
}

#[test]
fn compress_and_decompress_gradients_match_finite_differences() {
    let b = basis(6, 32, 8000);
    let sp0 = common::uniform(11, 2 * 17, 0.2, 2.0);
    let w = Tensor::new(&[2, 6], common::uniform(12, 12, -1.0, 1.0)).unwrap();
    let err = common::grad_rel_err(&[2, 17], &sp0, 1e-6, |sp| {
        let w = sp.tape().constant(w.clone());
        b.compress(sp).unwrap().mul(w).unwrap().sum()
    });
    assert!(err < 1e-4, "compress: {err}");

    let s0 = common::uniform(13, 12, -0.5, 0.5);
    let w = Tensor::new(&[2, 17], common::uniform(14, 34, -1.0, 1.0)).unwrap();
    let err = common::grad_rel_err(&[2, 6], &s0, 1e-6, |s| {
        let w = s.tape().constant(w.clone());
        b.decompress(s).unwrap().mul(w).unwrap().sum()
    });
    assert!(err < 1e-4, "decompress: {err}");
}

#[test]
fn ap_codec_reproduces_constants_and_ramps_exactly() {
    let tape = Tape::new();
    for c in [0.0, 0.37, 1.0] {
        let ap = tape.constant(Tensor::full(&[3, 513], c));
        let a = compress_ap(ap, 16).unwrap();
        assert_eq!(a.shape(), vec![3, 16]);
        assert!(a.value().data().iter().all(|&v| v == c));
        let back = decompress_ap(a, 513).unwrap().value();
        assert!(back.data().iter().all(|&v| v == c));
    }
    let ramp: Vec<f64> = (0..513).map(|k| k as f64 / 512.0).collect();
    let ap = tape.constant(Tensor::new(&[1, 513], ramp.clone()).unwrap());
    let a = compress_ap(ap, 16).unwrap();
    for (j, v) in a.value().data().iter().enumerate() {
        assert!((v - j as f64 / 15.0).abs() < 1e-12);
    }
    let back = decompress_ap(a, 513).unwrap().value();
    assert!(common::max_rel_err(back.data(), &ramp, 1e-12) < 1e-12);
}

#[test]
fn feature_level_codec_keeps_shapes_and_unvoiced_rows() {
    let meta = FrameMeta::new(22050, 256, 1024).unwrap();
    let sp: Vec<f64> = (0..3).flat_map(|_| two_formant(1024, 22050.0, 500.0, 1500.0)).collect();
    let ap = common::uniform(3, 3 * 513, 0.0, 1.0);
    let raw = WorldFeatures::new(
        vec![200.0, 0.0, 210.0],
        Tensor::new(&[3, 513], sp).unwrap(),
        Tensor::new(&[3, 513], ap).unwrap(),
        meta,
    )
    .unwrap();
    let b = basis(80, 1024, 22050);
    let c = compress_features(&raw, &b, 16).unwrap();
    assert_eq!((c.mels(), c.bands()), (80, 16));
    assert!(c.a().row(1).iter().all(|&v| v == 1.0));
    let back = decompress_features(&c, &b).unwrap();
    assert_eq!(back.sp().shape(), &[3, 513]);
    assert_eq!(back.ap().shape(), &[3, 513]);
    assert!(back.ap().row(1).iter().all(|&v| v == 1.0));

    let wrong = basis(80, 1024, 16000);
    assert!(compress_features(&raw, &wrong, 16).is_err());
}

proptest! {
    #[test]
    fn ap_roundtrip_stays_in_unit_interval(seed in any::<u64>(), bands in 2usize..40) {
        let ap = common::uniform(seed, 2 * 65, 0.0, 1.0);
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 65], ap).unwrap());
        let back = decompress_ap(compress_ap(x, bands).unwrap(), 65).unwrap().value();
        prop_assert!(back.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn scaling_sp_shifts_s_by_half_log_with_zero_epsilon(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let spec = MelSpec { epsilon: 0.0, ..MelSpec::new(8, 64, 8000) };
        let b = MelBasis::new(spec).unwrap();
        let sp = common::uniform(seed, 33, 0.1, 10.0);
        let scaled: Vec<f64> = sp.iter().map(|v| v * c).collect();
        let s0 = b.compress_sp(&Tensor::new(&[1, 33], sp).unwrap()).unwrap();
        let s1 = b.compress_sp(&Tensor::new(&[1, 33], scaled).unwrap()).unwrap();
        for (a, b) in s0.data().iter().zip(s1.data()) {
            prop_assert!((b - a - 0.5 * c.log10()).abs() < 1e-12);
        }
    }
}
