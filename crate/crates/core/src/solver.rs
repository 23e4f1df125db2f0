//! One-dimensional Maxwell–Bloch propagation in the weak-field limit.
//!
//! In the retarded frame with the medium normalized to ζ ∈ [0, 1] the model is
//!
//! ```text
//! ∂ζ E   = iK Σ_j p_j σ_j
//! ∂t σ_j = −(γ + iΔ_j) σ_j + i E
//! ```
//!
//! with p_j the spectral mass of detuning class j and K the calibrated
//! coupling from [`Medium::coupling`]. Time stepping is an exponential
//! integrator with E interpolated linearly across each step; the implicit
//! dependence on the new field is resolved exactly by marching the linear
//! transport equation slice by slice.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::Medium;
use crate::error::{ensure, Error, Result};
use crate::signal::{bin_frequency, fft_padded};
use crate::waveform::{wrap_phase, Direction, Waveform};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Input energy fraction allowed to fall on absorbing density the grid misses.
pub const LEAKAGE_LIMIT: f64 = 1e-3;

/// Atomic coherences σ(ζ_k, Δ_j) stored slice-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub sigma: Vec<Complex64>,
    pub nz: usize,
    pub nb: usize,
    pub direction: Direction,
    pub timestamp: f64,
    pub dt: f64,
    medium_flipped: bool,
    carrier: f64,
    /// Carrier phase extrapolated back to t = 0.
    carrier_origin: f64,
}

impl EnsembleState {
    pub fn slice(&self, k: usize) -> &[Complex64] {
        &self.sigma[k * self.nb..(k + 1) * self.nb]
    }

    /// Orientation of the detunings the state last evolved under.
    pub fn evolved_flipped(&self) -> bool {
        self.medium_flipped
    }

    fn check_medium(&self, medium: &Medium) -> Result<()> {
        ensure(medium.nz == self.nz && medium.n_bins() == self.nb, "medium", || {
            format!(
                "medium grid {}×{} does not match state grid {}×{}",
                medium.nz,
                medium.n_bins(),
                self.nz,
                self.nb
            )
        })
    }

    /// Free evolution for `tau`: each class picks up e^{−iΔτ} and the
    /// homogeneous-equivalent decay e^{−γτ}.
    pub fn wait(&self, tau: f64, medium: &Medium) -> Result<Self> {
        ensure(tau >= 0.0 && tau.is_finite(), "tau", || {
            format!("storage interval must be non-negative, got {tau}")
        })?;
        self.check_medium(medium)?;
        if medium.is_flipped() != self.medium_flipped {
            return Err(Error::ProtocolOrder(
                "free evolution must use the medium orientation the state was left in".into(),
            ));
        }
        let gamma = medium.decay_rate();
        let nb = self.nb;
        let mut next = self.clone();
        next.sigma
            .par_chunks_mut(nb)
            .enumerate()
            .for_each(|(k, row)| {
                for (j, s) in row.iter_mut().enumerate() {
                    let lambda = Complex64::new(gamma, medium.detuning(k, j));
                    *s *= (-lambda * tau).exp();
                }
            });
        next.timestamp += tau;
        Ok(next)
    }

    /// K·∫dζ Σ_j p_j|σ_j|²: equals the field energy absorbed so far when
    /// nothing decays.
    pub fn stored_energy(&self, medium: &Medium) -> f64 {
        let mass = &medium.grid.mass;
        let per_slice: Vec<f64> = (0..self.nz)
            .map(|k| {
                self.slice(k)
                    .iter()
                    .zip(mass)
                    .map(|(s, p)| p * s.norm_sqr())
                    .sum()
            })
            .collect();
        let h = 1.0 / (self.nz - 1) as f64;
        let inner: f64 = per_slice[1..self.nz - 1].iter().sum();
        medium.coupling() * h * (inner + 0.5 * (per_slice[0] + per_slice[self.nz - 1]))
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.iter().all(|s| *s == ZERO)
    }
}

/// (1 − e^{−x})/x.
fn phi1(x: Complex64) -> Complex64 {
    if x.norm() < 1e-2 {
        Complex64::new(1.0, 0.0) - x / 2.0 + x * x / 6.0 - x * x * x / 24.0 + x * x * x * x / 120.0
    } else {
        (Complex64::new(1.0, 0.0) - (-x).exp()) / x
    }
}

/// (1 − e^{−x}(1 + x))/x².
fn phi2(x: Complex64) -> Complex64 {
    if x.norm() < 1e-2 {
        Complex64::new(0.5, 0.0) - x / 3.0 + x * x / 8.0 - x * x * x / 30.0 + x * x * x * x / 144.0
    } else {
        (Complex64::new(1.0, 0.0) - (-x).exp() * (1.0 + x)) / (x * x)
    }
}

/// Weights (for the start and end values) of ∫_0^h e^{−λ(h−s)} f(s) ds with
/// f linear on the interval.
fn linear_weights(lambda: Complex64, h: f64) -> (Complex64, Complex64) {
    let x = lambda * h;
    let g = phi2(x);
    (g * h, (phi1(x) - g) * h)
}

struct Propagator<'a> {
    medium: &'a Medium,
    coupling: f64,
    dt: f64,
    h: f64,
    nb: usize,
    /// Coefficient rows: one shared row when every slice has the same
    /// detunings, otherwise one per slice.
    shared: bool,
    decay: Vec<Complex64>,
    i_w_start: Vec<Complex64>,
    i_w_end: Vec<Complex64>,
    mass_decay: Vec<Complex64>,
    /// Σ_j p_j·i·w_start per row.
    start_sum: Vec<Complex64>,
    /// Σ_j p_j·w_end per row.
    end_sum: Vec<Complex64>,
}

impl<'a> Propagator<'a> {
    fn new(medium: &'a Medium, dt: f64) -> Self {
        let nb = medium.n_bins();
        let nz = medium.nz;
        let gamma = medium.decay_rate();
        let offsets = medium.slice_offsets();
        let shared = offsets.iter().all(|o| *o == offsets[0]);
        let rows = if shared { 1 } else { nz };
        let mut decay = vec![ZERO; rows * nb];
        let mut i_w_start = vec![ZERO; rows * nb];
        let mut i_w_end = vec![ZERO; rows * nb];
        let mut mass_decay = vec![ZERO; rows * nb];
        let mut start_sum = vec![ZERO; rows];
        let mut end_sum = vec![ZERO; rows];
        for r in 0..rows {
            for j in 0..nb {
                let lambda = Complex64::new(gamma, medium.detuning(r, j));
                let (a, b) = linear_weights(lambda, dt);
                let p = medium.grid.mass[j];
                let idx = r * nb + j;
                decay[idx] = (-lambda * dt).exp();
                i_w_start[idx] = I * a;
                i_w_end[idx] = I * b;
                mass_decay[idx] = p * decay[idx];
                start_sum[r] += p * I * a;
                end_sum[r] += p * b;
            }
        }
        Self {
            medium,
            coupling: medium.coupling(),
            dt,
            h: 1.0 / (nz - 1) as f64,
            nb,
            shared,
            decay,
            i_w_start,
            i_w_end,
            mass_decay,
            start_sum,
            end_sum,
        }
    }

    #[inline]
    fn row(&self, k: usize) -> usize {
        if self.shared {
            0
        } else {
            k
        }
    }

    fn polarization(&self, row: &[Complex64]) -> Complex64 {
        row.iter().zip(&self.medium.grid.mass).map(|(s, p)| s * p).sum()
    }

    /// Runs `n_out` samples, feeding `input(n)` at the entrance of the march
    /// and returning the field leaving the last slice in `order`.
    fn run(
        &self,
        sigma: &mut [Complex64],
        input: impl Fn(usize) -> Complex64,
        n_out: usize,
        order: &[usize],
    ) -> Result<Vec<Complex64>> {
        let nz = order.len();
        let nb = self.nb;
        let k_i = I * self.coupling;
        let mut out = Vec::with_capacity(n_out);
        let mut e_old = vec![ZERO; nz];
        let mut e_new = vec![ZERO; nz];
        // S_k = iK Σ_j p_j (e^{−λ dt} σ_j + i·w_start·E_old).
        let mut source = vec![ZERO; nz];

        let pol: Vec<Complex64> = sigma.chunks(nb).map(|row| self.polarization(row)).collect();
        e_old[order[0]] = input(0);
        for m in 1..nz {
            let (a, b) = (order[m - 1], order[m]);
            e_old[b] = e_old[a] + 0.5 * self.h * k_i * (pol[a] + pol[b]);
        }
        out.push(e_old[order[nz - 1]]);
        source
            .par_iter_mut()
            .zip(sigma.par_chunks(nb))
            .enumerate()
            .for_each(|(k, (src, row))| {
                let base = self.row(k) * nb;
                let acc: Complex64 = row
                    .iter()
                    .zip(&self.mass_decay[base..base + nb])
                    .map(|(s, c)| c * s)
                    .sum();
                *src = k_i * (acc + self.start_sum[self.row(k)] * e_old[k]);
            });

        // Per-cell transport weights depend only on the slice pair.
        let steps: Vec<(Complex64, Complex64, Complex64)> = (1..nz)
            .map(|m| {
                let (a, b) = (order[m - 1], order[m]);
                let mu = self.coupling * 0.5 * (self.end_sum[self.row(a)] + self.end_sum[self.row(b)]);
                let (wa, wb) = linear_weights(mu, self.h);
                ((-mu * self.h).exp(), wa, wb)
            })
            .collect();

        for n in 1..n_out {
            e_new[order[0]] = input(n);
            for m in 1..nz {
                let (a, b) = (order[m - 1], order[m]);
                let (decay, wa, wb) = steps[m - 1];
                e_new[b] = decay * e_new[a] + wa * source[a] + wb * source[b];
            }
            let last = e_new[order[nz - 1]];
            if !last.is_finite() {
                let slice = (0..nz).find(|&k| !e_new[k].is_finite()).unwrap_or(0);
                return Err(Error::NumericalFailure {
                    step: n,
                    slice,
                    reason: format!(
                        "non-finite field (dt = {}, nz = {}, n_bins = {})",
                        self.dt, nz, nb
                    ),
                });
            }
            out.push(last);

            sigma
                .par_chunks_mut(nb)
                .zip(source.par_iter_mut())
                .enumerate()
                .for_each(|(k, (row, src))| {
                    let r = self.row(k);
                    let base = r * nb;
                    let (eo, en) = (e_old[k], e_new[k]);
                    let decay = &self.decay[base..base + nb];
                    let ws = &self.i_w_start[base..base + nb];
                    let we = &self.i_w_end[base..base + nb];
                    let md = &self.mass_decay[base..base + nb];
                    let mut acc = ZERO;
                    for j in 0..nb {
                        let v = decay[j] * row[j] + ws[j] * eo + we[j] * en;
                        row[j] = v;
                        acc += md[j] * v;
                    }
                    *src = k_i * (acc + self.start_sum[r] * en);
                });
            std::mem::swap(&mut e_old, &mut e_new);
        }
        Ok(out)
    }
}

fn march_order(nz: usize, direction: Direction) -> Vec<usize> {
    match direction {
        Direction::Forward => (0..nz).collect(),
        Direction::Backward => (0..nz).rev().collect(),
    }
}

/// Fraction of the input energy that the reversible part of the line would
/// absorb at detunings the grid does not cover.
pub fn spectral_leakage(input: &Waveform, medium: &Medium) -> f64 {
    let n = (2 * input.len()).next_power_of_two();
    let spec = fft_padded(&input.samples, n);
    let (lo, hi) = medium.band();
    let peak = (0..=200)
        .map(|i| medium.reversible_density(lo + (hi - lo) * i as f64 / 200.0))
        .fold(0.0, f64::max);
    if peak <= 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut leaked = 0.0;
    for (k, x) in spec.iter().enumerate() {
        let e = x.norm_sqr();
        total += e;
        // A component e^{iωt} drives atoms with Δ = −ω.
        let nu = -bin_frequency(k, n, input.dt);
        if nu < lo || nu > hi {
            let depth = medium.depth * medium.reversible_density(nu) / peak;
            leaked += e * (1.0 - (-depth).exp());
        }
    }
    if total == 0.0 {
        0.0
    } else {
        leaked / total
    }
}

/// Propagates a forward input through an initially unexcited medium.
pub fn absorb(input: &Waveform, medium: &Medium) -> Result<(Waveform, EnsembleState)> {
    ensure(input.direction == Direction::Forward, "direction", || {
        "absorption takes a forward-propagating input".into()
    })?;
    let leak = spectral_leakage(input, medium);
    if leak > LEAKAGE_LIMIT {
        return Err(Error::SpectralLeakage {
            fraction: leak,
            limit: LEAKAGE_LIMIT,
        });
    }
    let nz = medium.nz;
    let nb = medium.n_bins();
    let mut sigma = vec![ZERO; nz * nb];
    let out = if medium.depth == 0.0 {
        input.samples.clone()
    } else {
        let prop = Propagator::new(medium, input.dt);
        prop.run(
            &mut sigma,
            |n| input.samples[n],
            input.len(),
            &march_order(nz, Direction::Forward),
        )?
    };
    let transmitted = Waveform {
        samples: out,
        ..input.clone()
    };
    let state = EnsembleState {
        sigma,
        nz,
        nb,
        direction: Direction::Forward,
        timestamp: input.end_time(),
        dt: input.dt,
        medium_flipped: medium.is_flipped(),
        carrier: input.carrier,
        carrier_origin: input.carrier_phase - input.carrier * input.start_time,
    };
    Ok((transmitted, state))
}

/// Converts forward coherence into a backward-emitting source, σ_b = η·σ_f.
/// The complementary excitation is dropped.
pub fn mode_match(state: &EnsembleState, eta: f64) -> Result<EnsembleState> {
    ensure((0.0..=1.0).contains(&eta), "eta", || {
        format!("mode-matching efficiency must lie in [0, 1], got {eta}")
    })?;
    if state.direction != Direction::Forward {
        return Err(Error::ProtocolOrder("mode matching applies to a forward state".into()));
    }
    let mut next = state.clone();
    next.sigma.iter_mut().for_each(|s| *s *= eta);
    next.direction = Direction::Backward;
    Ok(next)
}

/// Lets the stored coherence radiate into an empty field mode for `n_samples`
/// steps. The medium must be in the opposite orientation to the one the state
/// was written in.
pub fn recall(state: &EnsembleState, medium_flipped: &Medium, n_samples: usize) -> Result<(Waveform, EnsembleState)> {
    state.check_medium(medium_flipped)?;
    if medium_flipped.is_flipped() == state.medium_flipped {
        return Err(Error::ProtocolOrder(
            "recall needs the detunings reversed relative to absorption; apply flip_detunings first".into(),
        ));
    }
    ensure(n_samples >= 2, "n_samples", || "recall window needs at least 2 samples".into())?;
    let mut next = state.clone();
    let prop = Propagator::new(medium_flipped, state.dt);
    let out = prop.run(
        &mut next.sigma,
        |_| ZERO,
        n_samples,
        &march_order(state.nz, state.direction),
    )?;
    let start = state.timestamp;
    let emitted = Waveform {
        samples: out,
        dt: state.dt,
        start_time: start,
        carrier: state.carrier,
        carrier_phase: wrap_phase(state.carrier_origin + state.carrier * start),
        direction: state.direction,
    };
    next.timestamp = start + (n_samples - 1) as f64 * state.dt;
    next.medium_flipped = medium_flipped.is_flipped();
    Ok((emitted, next))
}
