//! FFT helpers and waveform comparison metrics.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Forward FFT (X_k = Σ x_n e^{−2πikn/N}) of `x` zero-padded to `n`.
pub fn fft_padded(x: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..x.len()].copy_from_slice(x);
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

/// Inverse FFT including the 1/N factor.
pub fn ifft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let s = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= s);
    buf
}

/// Angular frequency of FFT bin `k` for sample spacing `dt` (signed, e^{+iωt} convention).
pub fn bin_frequency(k: usize, n: usize, dt: f64) -> f64 {
    let ks = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * std::f64::consts::PI * ks / (n as f64 * dt)
}

/// sqrt(Σ|a−b|² / Σ|b|²) over the common length.
pub fn relative_rms(a: &[Complex64], b: &[Complex64]) -> f64 {
    let n = a.len().min(b.len());
    let num: f64 = (0..n).map(|i| (a[i] - b[i]).norm_sqr()).sum();
    let den: f64 = b[..n].iter().map(|v| v.norm_sqr()).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// |⟨a, b⟩|² / (‖a‖²‖b‖²) at zero lag.
pub fn overlap_at_zero_lag(a: &[Complex64], b: &[Complex64]) -> f64 {
    let n = a.len().min(b.len());
    let inner: Complex64 = (0..n).map(|i| a[i].conj() * b[i]).sum();
    let na: f64 = a.iter().map(|v| v.norm_sqr()).sum();
    let nb: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (inner.norm_sqr() / (na * nb)).min(1.0)
    }
}

/// Normalized overlap |⟨a, b shifted⟩|² / (‖a‖²‖b‖²), maximized over integer
/// lags. Returns the overlap and the lag (b is delayed by `lag` samples).
pub fn best_overlap(a: &[Complex64], b: &[Complex64]) -> (f64, isize) {
    let na: f64 = a.iter().map(|v| v.norm_sqr()).sum();
    let nb: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    if na == 0.0 || nb == 0.0 {
        return (0.0, 0);
    }
    let n = (a.len() + b.len()).next_power_of_two();
    let fa = fft_padded(a, n);
    let fb = fft_padded(b, n);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    // c[m] = Σ_i conj(a_i) b_{i+m}
    let c = ifft(&prod);
    let (mut best, mut lag) = (0.0, 0isize);
    for (m, v) in c.iter().enumerate() {
        let s = v.norm_sqr();
        if s > best {
            best = s;
            lag = if m <= n / 2 { m as isize } else { m as isize - n as isize };
        }
    }
    ((best / (na * nb)).min(1.0), lag)
}

/// Pearson-style normalized cross-correlation magnitude of two envelopes at
/// their best lag: |⟨a, b⟩| / (‖a‖‖b‖).
pub fn normalized_correlation(a: &[Complex64], b: &[Complex64]) -> f64 {
    best_overlap(a, b).0.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pulse(n: usize, c: f64) -> Vec<Complex64> {
        (0..n)
            .map(|i| {
                let x = (i as f64 - c) / 5.0;
                Complex64::new((-x * x).exp(), 0.3 * x * (-x * x).exp())
            })
            .collect()
    }

    #[test]
    fn fft_roundtrip() {
        let x = pulse(64, 20.0);
        let y = ifft(&fft_padded(&x, 64));
        assert!(relative_rms(&y, &x) < 1e-14);
    }

    #[test]
    fn best_overlap_finds_shift() {
        let a = pulse(200, 60.0);
        let b = pulse(200, 97.0);
        let (o, lag) = best_overlap(&a, &b);
        assert_eq!(lag, 37);
        assert_relative_eq!(o, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn overlap_is_phase_insensitive() {
        let a = pulse(100, 50.0);
        let b: Vec<_> = a.iter().map(|v| v * Complex64::from_polar(2.0, 1.1)).collect();
        assert_relative_eq!(overlap_at_zero_lag(&a, &b), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bin_frequencies_are_signed() {
        assert_eq!(bin_frequency(0, 8, 1.0), 0.0);
        assert!(bin_frequency(7, 8, 1.0) < 0.0);
    }
}
