//! Thin-sample photon echoes from an ensemble of two-level Bloch vectors.
//!
//! Pulses are exact rotations, so pulse areas such as π/2 and π are
//! represented faithfully; there is no propagation back-action. Phase-matched
//! echo components are separated by phase cycling, which stands in for the
//! wave-vector selection of an extended sample.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{discretize, LineShape};
use crate::error::{ensure, invalid, Result};
use crate::signal::{fft_padded, ifft};
use crate::waveform::Waveform;

/// Bloch vector of one detuning class; u + iv is the optical coherence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub detuning: f64,
}

impl BlochVector {
    pub fn ground(detuning: f64) -> Self {
        Self {
            u: 0.0,
            v: 0.0,
            w: -1.0,
            detuning,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.u * self.u + self.v * self.v + self.w * self.w).sqrt()
    }

    pub fn coherence(&self) -> Complex64 {
        Complex64::new(self.u, self.v)
    }

    /// Rotates about the unit axis `n` by `angle` (right-handed).
    fn rotate(&mut self, n: [f64; 3], angle: f64) {
        let (s, c) = angle.sin_cos();
        let r = [self.u, self.v, self.w];
        let cross = [
            n[1] * r[2] - n[2] * r[1],
            n[2] * r[0] - n[0] * r[2],
            n[0] * r[1] - n[1] * r[0],
        ];
        let dot = n[0] * r[0] + n[1] * r[1] + n[2] * r[2];
        let k = dot * (1.0 - c);
        self.u = r[0] * c + cross[0] * s + n[0] * k;
        self.v = r[1] * c + cross[1] * s + n[1] * k;
        self.w = r[2] * c + cross[2] * s + n[2] * k;
    }

    /// Evolves for `dt` under a field of Rabi frequency `rabi` and phase
    /// `phase` (zero field allowed), with transverse decay time `t2`.
    /// The equation of motion is dr/dt = Ω × r with Ω = (Ω cosφ, Ω sinφ, −Δ),
    /// so u + iv precesses as e^{−iΔt} and a weak field drives it as i·Ω·e^{iφ}.
    pub fn evolve(&mut self, dt: f64, rabi: f64, phase: f64, t2: f64) {
        if dt <= 0.0 {
            return;
        }
        if rabi == 0.0 {
            let z = self.coherence() * Complex64::new(0.0, -self.detuning * dt).exp();
            self.u = z.re;
            self.v = z.im;
        } else {
            let axis = [rabi * phase.cos(), rabi * phase.sin(), -self.detuning];
            let mag = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
            self.rotate([axis[0] / mag, axis[1] / mag, axis[2] / mag], mag * dt);
        }
        if t2.is_finite() {
            let d = (-dt / t2).exp();
            self.u *= d;
            self.v *= d;
        }
    }

    /// Instantaneous pulse of area `area` about (cosφ, sinφ, 0).
    pub fn kick(&mut self, area: f64, phase: f64) {
        self.rotate([phase.cos(), phase.sin(), 0.0], area);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseRole {
    Write,
    Data,
    Read,
}

/// A square pulse; zero duration means an instantaneous rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub start: f64,
    #[serde(default)]
    pub duration: f64,
    pub area: f64,
    #[serde(default)]
    pub phase: f64,
    pub role: PulseRole,
}

impl Pulse {
    pub fn hard(start: f64, area: f64, phase: f64, role: PulseRole) -> Self {
        Self {
            start,
            duration: 0.0,
            area,
            phase,
            role,
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Piecewise-constant segments following a sampled envelope; sample i covers
/// [t_i, t_i + dt) with Rabi frequency `rabi_scale·|E_i|`.
pub fn pulses_from_waveform(w: &Waveform, rabi_scale: f64, role: PulseRole) -> Vec<Pulse> {
    w.samples
        .iter()
        .enumerate()
        .filter(|(_, e)| e.norm() > 0.0)
        .map(|(i, e)| Pulse {
            start: w.time(i),
            duration: w.dt,
            area: rabi_scale * e.norm() * w.dt,
            phase: e.arg(),
            role,
        })
        .collect()
}

/// Time-ordered, non-overlapping pulses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pulses: Vec<Pulse>,
}

impl PulseSequence {
    pub fn new(mut pulses: Vec<Pulse>) -> Result<Self> {
        ensure(!pulses.is_empty(), "pulses", || "a sequence needs at least one pulse".into())?;
        for p in &pulses {
            ensure(p.area >= 0.0 && p.area.is_finite(), "area", || {
                format!("pulse areas must be non-negative, got {}", p.area)
            })?;
            ensure(p.duration >= 0.0 && p.duration.is_finite(), "duration", || {
                format!("pulse durations must be non-negative, got {}", p.duration)
            })?;
            ensure(p.start.is_finite(), "start", || "pulse start must be finite".into())?;
        }
        pulses.sort_by(|a, b| a.start.total_cmp(&b.start));
        for w in pulses.windows(2) {
            // Abutting segments may differ from exact contact by rounding.
            let slack = 1e-9 * w[0].duration.max(1e-300);
            let overlap = w[1].start < w[0].end() - slack || (w[1].start == w[0].start);
            if overlap {
                return Err(invalid(
                    "pulses",
                    format!("pulses at {} and {} overlap", w[0].start, w[1].start),
                ));
            }
        }
        Ok(Self { pulses })
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    fn with_phase_offsets(&self, offsets: &[f64]) -> Self {
        let pulses = self
            .pulses
            .iter()
            .zip(offsets)
            .map(|(p, o)| Pulse {
                phase: p.phase + o,
                ..*p
            })
            .collect();
        Self { pulses }
    }
}

/// Detuning classes of a thin sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinSample {
    pub nodes: Vec<f64>,
    pub mass: Vec<f64>,
    pub t2: f64,
}

impl ThinSample {
    /// Discretizes `line` finely enough that the grid's artificial revival
    /// time (2π over the node spacing) exceeds `horizon` by a factor of two.
    pub fn new(line: &LineShape, t2: f64, horizon: f64, min_bins: usize) -> Result<Self> {
        ensure(t2 > 0.0, "t2", || format!("T2 must be positive, got {t2}"))?;
        let cutoff = 8.0;
        let span = cutoff * line.width;
        let needed = (2.0 * horizon * span / (2.0 * PI)).ceil() as usize;
        let n = needed.max(min_bins).max(16);
        let grid = discretize(line, n, cutoff)?;
        Ok(Self {
            nodes: grid.nodes,
            mass: grid.mass,
            t2,
        })
    }
}

/// Uniform sampling of a trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceGrid {
    pub start: f64,
    pub dt: f64,
    pub n: usize,
}

impl TraceGrid {
    pub fn time(&self, i: usize) -> f64 {
        self.start + i as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n.saturating_sub(1))
    }
}

/// Macroscopic polarization P(t) = Σ_j p_j (u_j + i v_j) sampled on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoTrace {
    pub grid: TraceGrid,
    pub polarization: Vec<Complex64>,
}

impl EchoTrace {
    pub fn intensity(&self) -> Vec<f64> {
        self.polarization.iter().map(|p| p.norm_sqr()).collect()
    }

    /// Time of the most intense sample strictly after `after`.
    pub fn peak_time_after(&self, after: f64) -> Option<f64> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.polarization.iter().enumerate() {
            if self.grid.time(i) <= after {
                continue;
            }
            let v = p.norm_sqr();
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| self.grid.time(i))
    }

    /// Largest intensity inside [from, to].
    pub fn peak_intensity_in(&self, from: f64, to: f64) -> f64 {
        self.polarization
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let t = self.grid.time(*i);
                t >= from && t <= to
            })
            .map(|(_, p)| p.norm_sqr())
            .fold(0.0, f64::max)
    }

    pub fn to_waveform(&self) -> Result<Waveform> {
        Ok(Waveform::new(self.polarization.clone(), self.grid.dt)?.with_start(self.grid.start))
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        match self.to_waveform() {
            Ok(w) => w.write_csv(out),
            Err(e) => Err(std::io::Error::other(e.to_string())),
        }
    }
}

/// Evolves one detuning class through `seq` and accumulates `weight·(u + iv)`
/// at each grid time into `out`. Samples coinciding with an instantaneous
/// pulse see the state after it.
fn accumulate_atom(seq: &PulseSequence, detuning: f64, t2: f64, weight: f64, grid: &TraceGrid, out: &mut [Complex64]) {
    let pulses = seq.pulses();
    let mut b = BlochVector::ground(detuning);
    let mut t = pulses[0].start.min(grid.start);
    let mut next = 0usize;
    let mut inside: Option<Pulse> = None;
    for (i, slot) in out.iter_mut().enumerate() {
        let ts = grid.time(i);
        loop {
            let boundary = match inside {
                Some(p) => p.end(),
                None if next < pulses.len() => pulses[next].start,
                None => f64::INFINITY,
            };
            if boundary > ts {
                break;
            }
            match inside {
                Some(p) => {
                    b.evolve(boundary - t, p.area / p.duration, p.phase, t2);
                    inside = None;
                    next += 1;
                }
                None => {
                    b.evolve(boundary - t, 0.0, 0.0, t2);
                    let p = pulses[next];
                    if p.duration == 0.0 {
                        b.kick(p.area, p.phase);
                        next += 1;
                    } else {
                        inside = Some(p);
                    }
                }
            }
            t = boundary;
        }
        match inside {
            Some(p) => b.evolve(ts - t, p.area / p.duration, p.phase, t2),
            None => b.evolve(ts - t, 0.0, 0.0, t2),
        }
        t = ts;
        *slot += weight * b.coherence();
    }
}

/// Raw polarization trace of a thin sample driven by `seq`.
pub fn polarization_trace(seq: &PulseSequence, sample: &ThinSample, grid: &TraceGrid) -> Vec<Complex64> {
    const CHUNK: usize = 64;
    let n_atoms = sample.nodes.len();
    let partial: Vec<Vec<Complex64>> = (0..n_atoms.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Complex64::new(0.0, 0.0); grid.n];
            for j in c * CHUNK..((c + 1) * CHUNK).min(n_atoms) {
                accumulate_atom(seq, sample.nodes[j], sample.t2, sample.mass[j], grid, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![Complex64::new(0.0, 0.0); grid.n];
    for p in partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Phase-cycled extraction. Pulses are grouped (`groups[i]` is the group of
/// pulse i); each group's phase is stepped through four values and the
/// component carrying `e^{i·signature[g]·φ_g}` for every group is returned.
pub fn phase_cycled_component(
    seq: &PulseSequence,
    sample: &ThinSample,
    grid: &TraceGrid,
    groups: &[usize],
    signature: &[i32],
) -> Result<Vec<Complex64>> {
    let comps = phase_cycled_components(seq, sample, grid, groups, &[signature.to_vec()])?;
    Ok(comps.into_iter().next().expect("one signature requested"))
}

/// Like [`phase_cycled_component`] for several signatures sharing one set of runs.
pub fn phase_cycled_components(
    seq: &PulseSequence,
    sample: &ThinSample,
    grid: &TraceGrid,
    groups: &[usize],
    signatures: &[Vec<i32>],
) -> Result<Vec<Vec<Complex64>>> {
    ensure(groups.len() == seq.pulses().len(), "groups", || {
        "one group index per pulse is required".into()
    })?;
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    ensure(signatures.iter().all(|s| s.len() == n_groups), "signature", || {
        format!("signatures need one entry per group ({n_groups})")
    })?;
    let runs = 4usize.pow(n_groups as u32);
    let traces: Vec<(Vec<usize>, Vec<Complex64>)> = (0..runs)
        .map(|r| {
            let steps: Vec<usize> = (0..n_groups).map(|g| (r / 4usize.pow(g as u32)) % 4).collect();
            let offsets: Vec<f64> = groups.iter().map(|&g| steps[g] as f64 * PI / 2.0).collect();
            let trace = polarization_trace(&seq.with_phase_offsets(&offsets), sample, grid);
            (steps, trace)
        })
        .collect();
    Ok(signatures
        .iter()
        .map(|sig| {
            let mut acc = vec![Complex64::new(0.0, 0.0); grid.n];
            for (steps, trace) in &traces {
                let phase: f64 = steps.iter().zip(sig).map(|(&k, &s)| -(s as f64) * k as f64 * PI / 2.0).sum();
                let w = Complex64::from_polar(1.0 / runs as f64, phase);
                for (a, v) in acc.iter_mut().zip(trace) {
                    *a += w * v;
                }
            }
            acc
        })
        .collect())
}

/// Settings shared by the echo simulations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoSettings {
    pub dt: f64,
    /// Minimum number of detuning classes.
    pub min_bins: usize,
}

impl Default for EchoSettings {
    fn default() -> Self {
        Self {
            dt: 0.01,
            min_bins: 400,
        }
    }
}

/// Two-pulse echo: areas θ₁ at t = 0 and θ₂ at t = τ, sampled to 3τ.
pub fn two_pulse_echo(
    tau: f64,
    areas: (f64, f64),
    line: &LineShape,
    t2: f64,
    settings: EchoSettings,
) -> Result<EchoTrace> {
    let n = (3.0 * tau / settings.dt).round().max(0.0) as usize + 1;
    let grid = TraceGrid {
        start: 0.0,
        dt: settings.dt,
        n,
    };
    two_pulse_echo_on(tau, areas, line, t2, grid, settings.min_bins)
}

/// Two-pulse echo sampled on an arbitrary grid.
pub fn two_pulse_echo_on(
    tau: f64,
    areas: (f64, f64),
    line: &LineShape,
    t2: f64,
    grid: TraceGrid,
    min_bins: usize,
) -> Result<EchoTrace> {
    ensure(tau > 0.0 && tau.is_finite(), "tau", || format!("pulse separation must be positive, got {tau}"))?;
    let seq = PulseSequence::new(vec![
        Pulse::hard(0.0, areas.0, 0.0, PulseRole::Write),
        Pulse::hard(tau, areas.1, 0.0, PulseRole::Read),
    ])?;
    let sample = ThinSample::new(line, t2, grid.end(), min_bins)?;
    Ok(EchoTrace {
        polarization: polarization_trace(&seq, &sample, &grid),
        grid,
    })
}

/// Stimulated echo: the component with signature (−1, +1, +1) over the write,
/// data and read pulse groups. Several read pulses share the read group.
pub fn stimulated_echo(seq: &PulseSequence, line: &LineShape, t2: f64, grid: TraceGrid, min_bins: usize) -> Result<EchoTrace> {
    let roles: Vec<PulseRole> = seq.pulses().iter().map(|p| p.role).collect();
    for role in [PulseRole::Write, PulseRole::Data, PulseRole::Read] {
        ensure(roles.contains(&role), "pulses", || {
            format!("a stimulated echo needs a {role:?} pulse")
        })?;
    }
    let groups: Vec<usize> = roles
        .iter()
        .map(|r| match r {
            PulseRole::Write => 0,
            PulseRole::Data => 1,
            PulseRole::Read => 2,
        })
        .collect();
    let sample = ThinSample::new(line, t2, grid.end() - seq.pulses()[0].start, min_bins)?;
    let polarization = phase_cycled_component(seq, &sample, &grid, &groups, &[-1, 1, 1])?;
    Ok(EchoTrace { grid, polarization })
}

/// E_echo(t) ∝ ∫ E*_write(ω) E_data(ω) E_read(ω) e^{iωt} dω, normalized to
/// unit peak magnitude. All three waveforms must share the time grid.
pub fn spectral_echo_oracle(write: &Waveform, data: &Waveform, read: &Waveform) -> Result<Waveform> {
    let same = |a: &Waveform, b: &Waveform| {
        a.len() == b.len() && (a.dt - b.dt).abs() <= 1e-12 * a.dt && (a.start_time - b.start_time).abs() <= 1e-9 * a.dt
    };
    if !same(write, data) || !same(write, read) {
        return Err(invalid("waveforms", "write, data and read must share one time grid"));
    }
    let n = write.len();
    let m = (2 * n).next_power_of_two();
    let fw = fft_padded(&write.samples, m);
    let fd = fft_padded(&data.samples, m);
    let fr = fft_padded(&read.samples, m);
    // conj(W) is the spectrum of w*(−t), so pulses at sample indices j_w, j_d,
    // j_r put the echo at index j_d + j_r − j_w, i.e. t_d + t_r − t_w.
    let prod: Vec<Complex64> = (0..m).map(|k| fw[k].conj() * fd[k] * fr[k]).collect();
    let mut y = ifft(&prod);
    y.truncate(n);
    let peak = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if peak > 0.0 {
        y.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(Waveform {
        samples: y,
        ..data.clone()
    })
}
