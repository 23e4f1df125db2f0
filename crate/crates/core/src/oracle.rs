//! Frequency-domain linear-response transfer through a medium.
//!
//! Independent of the time-domain solver: the amplitude attenuation a(ν) comes
//! from the analytic line density and the phase from its causal (Kramers–Kronig)
//! partner, evaluated with FFTs.

use num_complex::Complex64;

use crate::ensemble::Medium;
use crate::error::{ensure, Result};
use crate::signal::{bin_frequency, fft_padded, ifft};
use crate::waveform::{Direction, Waveform};

/// Minimum FFT length; sets the frequency resolution of the causal transform.
const MIN_FFT: usize = 1 << 16;

/// Complex response R(ν) on the `n`-point grid ν_k = bin_frequency(k),
/// given its real part a(ν_k). R(ν) = ∫_0^∞ h(t) e^{iνt} dt for a causal h.
pub fn causal_response(absorption: &[f64]) -> Vec<Complex64> {
    let n = absorption.len();
    let a: Vec<Complex64> = absorption.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    // e_m ∝ Σ_k a_k e^{−2πikm/n} is the even part of h; fold it onto t ≥ 0.
    let mut h = fft_padded(&a, n);
    let scale = 1.0 / n as f64;
    for (m, v) in h.iter_mut().enumerate() {
        let w = if m == 0 || m == n / 2 {
            1.0
        } else if m < n / 2 {
            2.0
        } else {
            0.0
        };
        *v *= w * scale;
    }
    ifft(&h).into_iter().map(|v| v * n as f64).collect()
}

/// Transfer factor per FFT bin of a waveform sampled at `dt`, padded to `n`.
pub fn transfer_function(medium: &Medium, n: usize, dt: f64) -> Vec<Complex64> {
    let absorption: Vec<f64> = (0..n)
        .map(|k| medium.absorption_profile(bin_frequency(k, n, dt)))
        .collect();
    let r = causal_response(&absorption);
    // Bin k carries e^{+iω_k t}, which drives atoms at ν = −ω_k.
    (0..n).map(|k| (-r[(n - k) % n]).exp()).collect()
}

/// Transmitted field computed in the frequency domain.
pub fn linear_transfer_oracle(input: &Waveform, medium: &Medium) -> Result<Waveform> {
    ensure(input.direction == Direction::Forward, "direction", || {
        "the transfer oracle takes a forward-propagating input".into()
    })?;
    let n = (8 * input.len()).next_power_of_two().max(MIN_FFT);
    if medium.depth == 0.0 {
        return Ok(input.clone());
    }
    let t = transfer_function(medium, n, input.dt);
    let spec = fft_padded(&input.samples, n);
    let out: Vec<Complex64> = spec.iter().zip(&t).map(|(x, h)| x * h).collect();
    let y = ifft(&out);
    Ok(Waveform {
        samples: y[..input.len()].to_vec(),
        ..input.clone()
    })
}
