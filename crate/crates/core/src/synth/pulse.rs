//! Audio-rate pitch contour and the harmonic pulse-train oscillator bank.

use std::f64::consts::TAU;

use rayon::prelude::*;

/// Per-sample amplitude rule for the oscillator bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Each pitch period carries unit energy.
    #[default]
    UnitPulseEnergy,
    /// Every active harmonic has unit amplitude.
    UnitAmplitude,
}

/// Audio-rate pitch and voicing for `len` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    pub f0: Vec<f64>,
    pub mask: Vec<f64>,
}

/// Upsample frame-rate `f0` (frame `t` centered on sample `t * hop`) to `len`
/// samples.
///
/// Between two voiced frames the frequency is interpolated linearly. Across a
/// voicing boundary the frequency is held from the voiced side while the
/// mask ramps linearly over that hop. Past the last frame values are held.
pub fn interpolate_f0(f0: &[f64], hop: usize, len: usize) -> PitchContour {
    let mut out = PitchContour {
        f0: vec![0.0; len],
        mask: vec![0.0; len],
    };
    if f0.is_empty() || hop == 0 {
        return out;
    }
    let last = f0.len() - 1;
    for n in 0..len {
        let t = n / hop;
        if t >= last {
            out.f0[n] = f0[last];
            out.mask[n] = if f0[last] > 0.0 { 1.0 } else { 0.0 };
            continue;
        }
        let frac = (n - t * hop) as f64 / hop as f64;
        let (a, b) = (f0[t], f0[t + 1]);
        let (va, vb) = (a > 0.0, b > 0.0);
        out.f0[n] = match (va, vb) {
            (true, true) => a + frac * (b - a),
            (true, false) => a,
            (false, true) => b,
            (false, false) => 0.0,
        };
        out.mask[n] = (1.0 - frac) * f64::from(u8::from(va)) + frac * f64::from(u8::from(vb));
    }
    out
}

/// Number of harmonics `k <= max_k` with `k * f0 < fs / 2`.
pub fn active_harmonics(f0: f64, sample_rate: f64, max_k: usize) -> usize {
    if !(f0 > 0.0) {
        return 0;
    }
    let nyquist = sample_rate / 2.0;
    let mut k = (nyquist / f0).floor() as usize;
    while k > 0 && k as f64 * f0 >= nyquist {
        k -= 1;
    }
    k.min(max_k)
}

/// Running phase `2 pi sum_{tau < n} f0(tau) / fs`, wrapped to `[0, 2 pi)`.
pub fn cumulative_phase(f0: &[f64], sample_rate: f64) -> Vec<f64> {
    let mut phase = Vec::with_capacity(f0.len());
    let mut acc = 0.0f64;
    for &f in f0 {
        phase.push(acc);
        acc = (acc + TAU * f / sample_rate).rem_euclid(TAU);
    }
    phase
}

/// Harmonic pulse train `sum_k c_k(n) sin(k phi(n))`.
pub fn pulse_train(
    contour: &PitchContour,
    sample_rate: f64,
    max_k: usize,
    normalization: Normalization,
) -> Vec<f64> {
    let phase = cumulative_phase(&contour.f0, sample_rate);
    let mut out = vec![0.0; phase.len()];
    out.par_chunks_mut(4096)
        .enumerate()
        .for_each(|(c, chunk)| {
            for (o, y) in chunk.iter_mut().enumerate() {
                let n = c * 4096 + o;
                let (f, m) = (contour.f0[n], contour.mask[n]);
                let k_act = active_harmonics(f, sample_rate, max_k);
                if k_act == 0 || m == 0.0 {
                    continue;
                }
                let amp = match normalization {
                    Normalization::UnitPulseEnergy => {
                        (2.0 * f / (k_act as f64 * sample_rate)).sqrt()
                    }
                    Normalization::UnitAmplitude => 1.0,
                };
                *y = amp * m * harmonic_sum(phase[n], k_act);
            }
        });
    out
}

/// `sum_{k=1..k_max} sin(k phi)` by the Chebyshev recurrence.
fn harmonic_sum(phi: f64, k_max: usize) -> f64 {
    let (s1, c2) = (phi.sin(), 2.0 * phi.cos());
    let (mut prev, mut cur) = (0.0, s1);
    let mut total = s1;
    for _ in 1..k_max {
        let next = c2 * cur - prev;
        prev = cur;
        cur = next;
        total += cur;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_matches_direct_sum() {
        for &phi in &[0.0, 0.1, 1.0, 3.0, 6.2] {
            for k in [1usize, 2, 7, 155] {
                let direct: f64 = (1..=k).map(|j| (j as f64 * phi).sin()).sum();
                assert!((harmonic_sum(phi, k) - direct).abs() < 1e-10, "{phi} {k}");
            }
        }
    }

    #[test]
    fn nyquist_mask_is_strict() {
        assert_eq!(active_harmonics(11025.0, 22050.0, 155), 0);
        assert_eq!(active_harmonics(5512.5, 22050.0, 155), 1);
        assert_eq!(active_harmonics(5512.0, 22050.0, 155), 2);
        assert_eq!(active_harmonics(71.0, 22050.0, 155), 155);
        assert_eq!(active_harmonics(50.0, 22050.0, 155), 155);
        assert_eq!(active_harmonics(0.0, 22050.0, 155), 0);
    }
}
