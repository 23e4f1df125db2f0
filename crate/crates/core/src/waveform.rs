//! Complex slowly-varying envelopes on a uniform time grid.

use std::f64::consts::{LN_2, PI};
use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

/// Envelope E(t) sampled at `start_time + n·dt`.
///
/// The carrier e^{iω₀t} is not part of the samples; `carrier_phase` is the
/// carrier phase at `start_time` referred to the input record, which is how
/// the storage phase ω₀τ is carried through a memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub dt: f64,
    pub start_time: f64,
    pub carrier: f64,
    pub carrier_phase: f64,
    pub direction: Direction,
}

/// Wraps a phase into [0, 2π).
pub fn wrap_phase(phi: f64) -> f64 {
    phi.rem_euclid(2.0 * PI)
}

/// Wraps a phase into (−π, π].
pub fn wrap_signed(phi: f64) -> f64 {
    let w = wrap_phase(phi);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

impl Waveform {
    pub fn new(samples: Vec<Complex64>, dt: f64) -> Result<Self> {
        ensure(dt > 0.0 && dt.is_finite(), "dt", || format!("time step must be positive, got {dt}"))?;
        ensure(samples.len() >= 2, "samples", || {
            format!("a waveform needs at least 2 samples, got {}", samples.len())
        })?;
        ensure(samples.iter().all(|s| s.is_finite()), "samples", || {
            "waveform samples must be finite".into()
        })?;
        Ok(Self {
            samples,
            dt,
            start_time: 0.0,
            carrier: 0.0,
            carrier_phase: 0.0,
            direction: Direction::Forward,
        })
    }

    /// Samples `f(t)` at t = n·dt for n in 0..n.
    pub fn from_fn(n: usize, dt: f64, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        Self::new((0..n).map(|i| f(i as f64 * dt)).collect(), dt)
    }

    /// Transform-limited Gaussian with intensity FWHM `fwhm`, centred at `center`.
    pub fn gaussian(n: usize, dt: f64, center: f64, fwhm: f64) -> Result<Self> {
        ensure(fwhm > 0.0, "fwhm", || format!("pulse width must be positive, got {fwhm}"))?;
        let s = gaussian_amplitude_sigma(fwhm);
        Self::from_fn(n, dt, |t| {
            let x = (t - center) / s;
            Complex64::new((-0.5 * x * x).exp(), 0.0)
        })
    }

    /// Unit-amplitude square pulse on [start, start + duration).
    pub fn square(n: usize, dt: f64, start: f64, duration: f64) -> Result<Self> {
        ensure(duration > 0.0, "duration", || {
            format!("pulse duration must be positive, got {duration}")
        })?;
        Self::from_fn(n, dt, |t| {
            if t >= start - 1e-9 * dt && t < start + duration - 1e-9 * dt {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn with_carrier(mut self, carrier: f64) -> Self {
        self.carrier = carrier;
        self
    }

    pub fn with_start(mut self, start_time: f64) -> Self {
        self.start_time = start_time;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start_time + i as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    /// Σ|E|²·dt.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.dt
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.norm_sqr()).collect()
    }

    pub fn scaled(&self, a: Complex64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * a).collect(),
            ..self.clone()
        }
    }

    /// E(t) → E(T − t) over the record, reversing sample order.
    pub fn time_reversed(&self) -> Self {
        let mut w = self.clone();
        w.samples.reverse();
        w
    }

    /// Index of the most intense sample.
    pub fn peak_index(&self) -> usize {
        self.samples
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, bv), (i, s)| {
                let v = s.norm_sqr();
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }

    /// CSV with columns t, re, im, intensity.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,re,im,intensity")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_sig(self.time(i)),
                fmt_sig(s.re),
                fmt_sig(s.im),
                fmt_sig(s.norm_sqr())
            )?;
        }
        Ok(())
    }
}

/// Amplitude standard deviation of a Gaussian whose intensity FWHM is `fwhm`.
pub fn gaussian_amplitude_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * LN_2.sqrt())
}

/// Formats `x` with 12 significant digits, without trailing zeros.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { format!("{x}") };
    }
    let s = format!("{:.11e}", x);
    let v: f64 = s.parse().unwrap_or(x);
    if (1e-4..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_energy_and_width() {
        let w = Waveform::gaussian(4001, 0.001, 2.0, 0.3).unwrap();
        let expected = gaussian_amplitude_sigma(0.3) * PI.sqrt();
        assert_relative_eq!(w.energy(), expected, max_relative = 1e-9);
        let i = w.intensity();
        let half = i.iter().filter(|&&v| v >= 0.5).count() as f64 * w.dt;
        assert_relative_eq!(half, 0.3, epsilon = 2.0 * w.dt);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Waveform::new(vec![Complex64::new(1.0, 0.0)], 0.1).is_err());
        assert!(Waveform::new(vec![Complex64::new(1.0, 0.0); 4], 0.0).is_err());
        assert!(Waveform::new(vec![Complex64::new(f64::NAN, 0.0); 4], 0.1).is_err());
    }

    #[test]
    fn square_pulse_has_requested_duration() {
        let w = Waveform::square(100, 0.1, 1.0, 2.0).unwrap();
        assert_relative_eq!(w.energy(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(0.1 + 0.2), "0.3");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(-2.5e-20), "-2.5e-20");
    }

    #[test]
    fn phase_wrapping() {
        assert_relative_eq!(wrap_phase(-0.5), 2.0 * PI - 0.5);
        assert_relative_eq!(wrap_signed(3.0 * PI / 2.0), -PI / 2.0);
    }
}
