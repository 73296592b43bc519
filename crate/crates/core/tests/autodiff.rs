mod common;

use common::{fd_gradient, max_rel_err, rel_l2, uniform};
use diffworld::tensor::{FrameSpec, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Checks the analytic gradient of a scalar function of one tensor input
/// against central differences.
fn check_grad(shape: &[usize], x0: &[f64], f: impl for<'t> Fn(Var<'t>) -> Var<'t>) {
    let analytic = {
        let tape = Tape::new();
        let x = tape.param(Tensor::new(shape, x0.to_vec()).unwrap());
        let g = f(x).backward().unwrap();
        g.get(x).unwrap().to_vec()
    };
    let numeric = fd_gradient(
        |v| {
            let tape = Tape::new();
            let x = tape.constant(Tensor::new(shape, v.to_vec()).unwrap());
            f(x).value().item().unwrap()
        },
        x0,
        H,
    );
    let err = max_rel_err(&analytic, &numeric, 1e-8);
    assert!(err < TOL, "rel err {err}: {analytic:?} vs {numeric:?}");
}

#[test]
fn elementwise_mul_example() {
    let tape = Tape::new();
    let a = tape.constant(vec![1.0, 2.0].into());
    let b = tape.constant(vec![3.0, 4.0].into());
    assert_eq!(a.mul(b).unwrap().value().data(), &[3.0, 8.0]);
}

#[test]
fn clamp_min_zeroes_negative_entries() {
    let tape = Tape::new();
    let m = tape.constant(vec![-0.5, 0.0, 0.25, -1e-12].into());
    assert_eq!(m.clamp_min(0.0).value().data(), &[0.0, 0.0, 0.25, 0.0]);
}

#[test]
fn log10_derivative_at_ten() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(10.0));
    let g = x.log10().unwrap().sum().backward().unwrap();
    let analytic = g.get(x).unwrap().data()[0];
    let fd = ((10.0f64 + 1e-6).log10() - (10.0f64 - 1e-6).log10()) / 2e-6;
    assert!((analytic - fd).abs() < 1e-9);
    assert!((analytic - 0.043429).abs() < 1e-6);
}

#[test]
fn domain_errors_report_offending_index() {
    let tape = Tape::new();
    let x = tape.constant(vec![1.0, 4.0, -2.0].into());
    match x.sqrt() {
        Err(TensorError::Domain { op, index, value }) => {
            assert_eq!(op, "sqrt");
            assert_eq!(index, 2);
            assert_eq!(value, -2.0);
        }
        other => panic!("expected domain error, got {other:?}"),
    }
    assert!(matches!(
        tape.constant(vec![0.5, 0.0].into()).log10(),
        Err(TensorError::Domain { index: 1, .. })
    ));
}

#[test]
fn incompatible_shapes_are_rejected() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[3]));
    let b = tape.constant(Tensor::zeros(&[4]));
    assert!(matches!(a.add(b), Err(TensorError::ShapeMismatch { .. })));
    let m = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(m.matmul(m), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn broadcasting_gradients_reduce_to_operand_shape() {
    let tape = Tape::new();
    let a = tape.param(Tensor::new(&[2, 1, 3], uniform(1, 6, -1.0, 1.0)).unwrap());
    let b = tape.param(Tensor::new(&[4, 1], uniform(2, 4, -1.0, 1.0)).unwrap());
    let y = a.mul(b).unwrap();
    assert_eq!(y.shape(), vec![2, 4, 3]);
    let g = y.sum().backward().unwrap();
    // d/da sum(a*b) = sum over broadcast axis of b.
    let bsum: f64 = b.value().data().iter().sum();
    for v in g.get(a).unwrap().data() {
        assert!((v - bsum).abs() < 1e-12);
    }
    assert_eq!(g.get(b).unwrap().shape(), &[4, 1]);
}

type BinFn = for<'t> fn(Var<'t>, Var<'t>) -> Var<'t>;

fn with_other(other: &Tensor, f: BinFn) -> impl for<'t> Fn(Var<'t>) -> Var<'t> + '_ {
    move |x| {
        let c = x.tape().constant(other.clone());
        f(x, c).sum()
    }
}

#[test]
fn every_elementwise_op_matches_finite_differences() {
    let pos = uniform(3, 6, 0.5, 2.0);
    let mixed = uniform(4, 6, -2.0, 2.0);
    let other = Tensor::new(&[6], uniform(5, 6, 0.5, 1.5)).unwrap();

    check_grad(&[6], &mixed, with_other(&other, |x, c| x.add(c).unwrap().square()));
    check_grad(&[6], &mixed, with_other(&other, |x, c| c.sub(x).unwrap().square()));
    check_grad(&[6], &mixed, with_other(&other, |x, c| x.mul(c).unwrap().square()));
    check_grad(&[6], &mixed, with_other(&other, |x, c| x.div(c).unwrap().square()));
    check_grad(&[6], &mixed, with_other(&other, |x, c| c.div(x.square().offset(1.0)).unwrap()));
    check_grad(&[6], &pos, with_other(&other, |x, c| x.pow(c).unwrap()));
    check_grad(&[6], &mixed, with_other(&other, |x, c| c.pow(x).unwrap()));
    check_grad(&[6], &mixed, |x| x.exp().sum());
    check_grad(&[6], &pos, |x| x.log10().unwrap().sum());
    check_grad(&[6], &pos, |x| x.ln().unwrap().sum());
    check_grad(&[6], &pos, |x| x.sqrt().unwrap().sum());
    check_grad(&[6], &mixed, |x| x.sigmoid().sum());
    check_grad(&[6], &mixed, |x| x.abs().scale(3.0).sum());
    check_grad(&[6], &mixed, |x| x.clamp_min(0.1).square().sum());
    check_grad(&[6], &mixed, |x| x.clamp(-0.5, 0.7).square().sum());
    check_grad(&[6], &mixed, |x| x.neg().exp().mean());
}

#[test]
fn reductions_and_reshape_gradients() {
    let x0 = uniform(6, 12, -1.0, 1.0);
    check_grad(&[2, 3, 2], &x0, |x| x.square().sum_axis(1).unwrap().exp().sum());
    check_grad(&[2, 3, 2], &x0, |x| x.square().sum_axis(0).unwrap().exp().sum());
    check_grad(&[2, 3, 2], &x0, |x| {
        x.reshape(&[6, 2]).unwrap().sum_axis(1).unwrap().square().mean()
    });
}

#[test]
fn matmul_identity_shape_and_bilinearity() {
    let tape = Tape::new();
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 4] = 1.0;
    }
    let i3 = tape.constant(Tensor::new(&[3, 3], eye).unwrap());
    let v = tape.constant(Tensor::new(&[3, 1], vec![1.5, -2.0, 7.0]).unwrap());
    assert_eq!(i3.matmul(v).unwrap().value().data(), &[1.5, -2.0, 7.0]);

    let m = tape.constant(Tensor::zeros(&[80, 513]));
    let s = tape.constant(Tensor::zeros(&[513, 7]));
    assert_eq!(m.matmul(s).unwrap().shape(), vec![80, 7]);

    let a = tape.param(Tensor::new(&[1, 4], uniform(7, 4, -1.0, 1.0)).unwrap());
    let b = tape.constant(Tensor::new(&[4, 1], uniform(8, 4, -1.0, 1.0)).unwrap());
    let g = a.matmul(b).unwrap().sum().backward().unwrap();
    assert_eq!(g.get(a).unwrap().data(), b.value().data());
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let b = Tensor::new(&[4, 3], uniform(9, 12, -1.0, 1.0)).unwrap();
    let a0 = uniform(10, 8, -1.0, 1.0);
    check_grad(&[2, 4], &a0, |a| {
        let bb = a.tape().constant(b.clone());
        a.matmul(bb).unwrap().square().sum()
    });
    let a = Tensor::new(&[2, 4], a0.clone()).unwrap();
    check_grad(&[4, 3], b.data(), |bv| {
        let aa = bv.tape().constant(a.clone());
        aa.matmul(bv).unwrap().exp().sum()
    });
}

#[test]
fn fft_of_zeros_and_impulse() {
    let tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[8])).rfft(8).unwrap();
    assert!(z.value().data().iter().all(|&v| v == 0.0));
    let mut imp = vec![0.0; 8];
    imp[0] = 1.0;
    let spec = tape.constant(imp.into()).rfft(8).unwrap().value();
    assert_eq!(spec.shape(), &[2, 5]);
    assert_eq!(&spec.data()[..5], &[1.0; 5]);
    assert_eq!(&spec.data()[5..], &[0.0; 5]);
}

#[test]
fn fft_rejects_non_power_of_two() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[6]));
    assert_eq!(x.rfft(6).unwrap_err(), TensorError::FftSize(6));
}

#[test]
fn parseval_on_random_signal() {
    let x = uniform(11, 64, -1.0, 1.0);
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let tape = Tape::new();
    let spec = tape.constant(x.into()).rfft(64).unwrap().value();
    let (re, im) = spec.data().split_at(33);
    let p = |k: usize| re[k] * re[k] + im[k] * im[k];
    let mid: f64 = (1..32).map(p).sum();
    let parseval = (p(0) + 2.0 * mid + p(32)) / 64.0;
    assert!((energy - parseval).abs() < 1e-10 * energy);
}

#[test]
fn fft_gradients_match_finite_differences() {
    let x0 = uniform(12, 2 * 6, -1.0, 1.0);
    let weights = Tensor::new(&[2, 2, 5], uniform(13, 20, -1.0, 1.0)).unwrap();
    check_grad(&[2, 6], &x0, |x| {
        let w = x.tape().constant(weights.clone());
        x.rfft(8).unwrap().mul(w).unwrap().square().sum()
    });
    let s0 = uniform(14, 2 * 3 * 5, -1.0, 1.0);
    check_grad(&[2, 3, 5], &s0, |s| s.irfft(8).unwrap().square().exp().sum());
}

#[test]
fn framing_and_filter_gradients() {
    let spec = FrameSpec {
        frame_len: 8,
        hop: 2,
        frames: 5,
        offset: -4,
        signal_len: 9,
    };
    let x0 = uniform(15, 9, -1.0, 1.0);
    check_grad(&[9], &x0, |x| x.frame(spec).unwrap().square().sum_axis(1).unwrap().sqrt().unwrap().sum());
    let f0 = uniform(16, 40, -1.0, 1.0);
    check_grad(&[5, 8], &f0, |f| f.overlap_add(spec).unwrap().exp().sum());

    let taps = Tensor::from_vec(uniform(17, 4, -1.0, 1.0));
    check_grad(&[9], &x0, |x| {
        let w = x.tape().constant(taps.clone());
        x.causal_fir(w, 1).unwrap().square().sum()
    });
    let sig = Tensor::from_vec(x0.clone());
    check_grad(&[4], taps.data(), |w| {
        let x = w.tape().constant(sig.clone());
        x.causal_fir(w, 1).unwrap().square().sum()
    });
    check_grad(&[9], &x0, |x| x.avg_pool1d(4, 2, 1).unwrap().square().sum());
    check_grad(&[9], &x0, |x| x.resample_uniform(4).unwrap().exp().sum());
}

#[test]
fn sum_backward_gives_ones_and_square_gives_twice_x() {
    let tape = Tape::new();
    let x = tape.param(vec![1.0, 2.0].into());
    let g = x.sum().backward().unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
    let g = x.square().sum().backward().unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_requires_scalar_and_ignores_constants() {
    let tape = Tape::new();
    let x = tape.param(vec![1.0, 2.0].into());
    assert_eq!(
        x.square().backward().unwrap_err(),
        TensorError::NotScalar(vec![2])
    );
    let c = tape.constant(vec![3.0, 4.0].into());
    let g = c.square().sum().backward().unwrap();
    assert!(g.is_empty());
    assert!(g.get(c).is_none());
}

#[test]
fn backward_is_linear_in_the_loss() {
    let tape = Tape::new();
    let x = tape.param(Tensor::from_vec(uniform(18, 5, 0.5, 1.5)));
    let l1 = x.square().sum();
    let l2 = x.log10().unwrap().mean();
    let g1 = l1.backward().unwrap().get(x).unwrap().to_vec();
    let g2 = l2.backward().unwrap().get(x).unwrap().to_vec();
    let g12 = l1.add(l2).unwrap().backward().unwrap().get(x).unwrap().to_vec();
    for i in 0..5 {
        assert!((g12[i] - (g1[i] + g2[i])).abs() < 1e-12);
    }
}

#[test]
fn shared_subexpressions_accumulate() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = x.mul(x).unwrap().add(x).unwrap();
    let g = y.sum().backward().unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[7.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fft_inverse_fft_roundtrip(log_n in 1u32..=10, seed in any::<u64>()) {
        let n = 1usize << log_n;
        let x = uniform(seed, n, -1.0, 1.0);
        let tape = Tape::new();
        let back = tape.constant(x.clone().into()).rfft(n).unwrap().irfft(n).unwrap().value();
        prop_assert!(rel_l2(back.data(), &x) < 1e-10);
    }
}
