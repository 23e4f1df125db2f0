//! Interference fringes of recalled light: cosine fitting, visibility and
//! fidelity, the two-read time-bin analyser, the two-memory interferometer,
//! and the coherent/incoherent emission balance.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::echo::{
    phase_cycled_components, pulses_from_waveform, two_pulse_echo_on, Pulse, PulseRole, PulseSequence, ThinSample,
    TraceGrid,
};
use crate::ensemble::LineShape;
use crate::error::{ensure, invalid, Error, Result};
use crate::timebin::TimeBinState;

/// Least-squares fit I(θ) = a + b·cosθ + c·sinθ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub offset: f64,
    pub amplitude: f64,
    /// Phase θ₀ of the maximum, I = a + A·cos(θ − θ₀).
    pub phase: f64,
    pub visibility: f64,
    /// RMS of the fit residuals relative to the offset.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringeScan {
    pub phases: Vec<f64>,
    pub intensities: Vec<f64>,
    pub fit: FringeFit,
    pub visibility: f64,
    pub fidelity: f64,
}

impl FringeScan {
    fn from_points(phases: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        let fit = fit_fringe(&phases, &intensities)?;
        Ok(Self {
            phases,
            intensities,
            visibility: fit.visibility,
            fidelity: fidelity_from_visibility(fit.visibility)?,
            fit,
        })
    }
}

fn solve3(mut m: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

pub fn fit_fringe(phases: &[f64], intensities: &[f64]) -> Result<FringeFit> {
    let fail = |reason: &str, residual: f64| Error::AnalysisFailure {
        reason: reason.into(),
        residual,
    };
    if phases.len() != intensities.len() || phases.len() < 3 {
        return Err(fail("a fringe fit needs at least three (phase, intensity) pairs", f64::NAN));
    }
    if intensities.iter().chain(phases).any(|v| !v.is_finite()) {
        return Err(fail("non-finite fringe data", f64::NAN));
    }
    let mut m = [[0.0; 4]; 3];
    for (&th, &y) in phases.iter().zip(intensities) {
        let basis = [1.0, th.cos(), th.sin()];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            m[i][3] += basis[i] * y;
        }
    }
    let [a, b, c] = solve3(m).ok_or_else(|| fail("scanned phases do not determine a cosine", f64::NAN))?;
    let rms = (phases
        .iter()
        .zip(intensities)
        .map(|(th, y)| (y - a - b * th.cos() - c * th.sin()).powi(2))
        .sum::<f64>()
        / phases.len() as f64)
        .sqrt();
    if !(a > 0.0) {
        return Err(fail("fitted mean intensity is not positive", rms));
    }
    let amplitude = b.hypot(c);
    let v = amplitude / a;
    let residual = rms / a;
    if v > 1.0 + 1e-6 {
        return Err(fail("fitted visibility exceeds one", residual));
    }
    Ok(FringeFit {
        offset: a,
        amplitude,
        phase: c.atan2(b),
        visibility: v.min(1.0),
        residual,
    })
}

pub fn fidelity_from_visibility(v: f64) -> Result<f64> {
    ensure((0.0..=1.0).contains(&v), "visibility", || format!("visibility must lie in [0, 1], got {v}"))?;
    Ok(0.5 * (1.0 + v))
}

/// Gaussian phase-noise width that scales a perfect fringe down to
/// visibility `v`, from ⟨cos n⟩ = e^{−σ²/2}.
pub fn phase_noise_for_visibility(v: f64) -> Result<f64> {
    ensure(v > 0.0 && v <= 1.0, "visibility", || format!("target visibility must lie in (0, 1], got {v}"))?;
    Ok((-2.0 * v.ln()).sqrt())
}

/// Per-shot Gaussian noise on the scanned interferometer phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseNoise {
    pub sigma: f64,
    pub shots: usize,
    pub seed: u64,
}

impl Default for PhaseNoise {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            shots: 1,
            seed: 0,
        }
    }
}

/// Intensity ⟨|A + e^{i(θ+n)}B|²⟩ over shots, given the energies of both
/// paths (`e_sum` = ‖A‖² + ‖B‖²) and the cross term ⟨A, B⟩. Each scan point
/// draws from its own stream so points are independent and reproducible.
fn noisy_scan(e_sum: f64, cross: Complex64, points: usize, noise: PhaseNoise, background: f64) -> Result<FringeScan> {
    ensure(points >= 3, "points", || format!("a scan needs at least 3 points, got {points}"))?;
    ensure(noise.sigma >= 0.0 && noise.sigma.is_finite(), "noise.sigma", || {
        format!("phase noise must be non-negative, got {}", noise.sigma)
    })?;
    ensure(noise.shots >= 1, "noise.shots", || "at least one shot per point".into())?;
    let normal = Normal::new(0.0, noise.sigma).map_err(|e| invalid("noise.sigma", e.to_string()))?;
    let phases: Vec<f64> = (0..points).map(|k| 2.0 * PI * k as f64 / points as f64).collect();
    let intensities: Vec<f64> = phases
        .par_iter()
        .enumerate()
        .map(|(k, &th)| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(k as u64);
            let mut acc = 0.0;
            for _ in 0..noise.shots {
                let n = if noise.sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                acc += e_sum + 2.0 * (Complex64::from_polar(1.0, th + n) * cross).re;
            }
            acc / noise.shots as f64 + background
        })
        .collect();
    FringeScan::from_points(phases, intensities)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScannedRead {
    First,
    Second,
}

/// Write, time-bin data and two read pulses separated by the bin separation;
/// the central output slot mixes the late bin read by the first pulse with
/// the early bin read by the second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeBinFringeConfig {
    pub line: LineShape,
    pub t2: f64,
    pub write_area: f64,
    /// Area of one full-amplitude bin.
    pub data_area: f64,
    /// (θ₁, θ₂); the default balances the two central-slot contributions,
    /// tan θ₁ = 2·tan(θ₂/2).
    pub read_areas: (f64, f64),
    pub read_phases: (f64, f64),
    pub scanned: ScannedRead,
    /// Centre of the early bin after the write pulse at t = 0.
    pub first_bin: f64,
    pub read_time: f64,
    pub dt: f64,
    pub points: usize,
    pub noise: PhaseNoise,
    pub min_bins: usize,
}

impl TimeBinFringeConfig {
    pub fn new(line: LineShape, first_bin: f64, read_time: f64) -> Self {
        Self {
            line,
            t2: f64::INFINITY,
            write_area: PI / 2.0,
            data_area: 0.05,
            read_areas: (2f64.atan(), PI / 2.0),
            read_phases: (0.0, 0.0),
            scanned: ScannedRead::Second,
            first_bin,
            read_time,
            dt: 0.02,
            points: 24,
            noise: PhaseNoise::default(),
            min_bins: 200,
        }
    }
}

/// Central-slot fields of the two reads, each at its reference phase.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralSlot {
    pub grid: TraceGrid,
    pub first_read: Vec<Complex64>,
    pub second_read: Vec<Complex64>,
}

pub fn central_slot(stored: &TimeBinState, cfg: &TimeBinFringeConfig) -> Result<CentralSlot> {
    let sep = stored.bin_separation;
    let shape_half = stored.shape.support();
    ensure(cfg.dt > 0.0, "dt", || format!("time step must be positive, got {}", cfg.dt))?;
    ensure(cfg.first_bin - shape_half > 0.0, "first_bin", || {
        "the early bin must start after the write pulse".into()
    })?;
    let data_end = cfg.first_bin + sep + shape_half;
    ensure(cfg.read_time > data_end, "read_time", || {
        format!("the first read at {} overlaps the data ending at {data_end}", cfg.read_time)
    })?;
    // Data record on its own grid, offset so the early bin sits at first_bin.
    let start = cfg.first_bin - shape_half;
    let n_data = ((sep + 2.0 * shape_half) / cfg.dt).ceil() as usize + 1;
    let data = stored.encode(n_data, cfg.dt, shape_half)?.with_start(start);
    let bin_area = stored.shape.area();
    let mut pulses = vec![
        Pulse::hard(0.0, cfg.write_area, 0.0, PulseRole::Write),
        Pulse::hard(cfg.read_time, cfg.read_areas.0, cfg.read_phases.0, PulseRole::Read),
        Pulse::hard(cfg.read_time + sep, cfg.read_areas.1, cfg.read_phases.1, PulseRole::Read),
    ];
    pulses.extend(pulses_from_waveform(&data, cfg.data_area / bin_area, PulseRole::Data));
    let seq = PulseSequence::new(pulses)?;
    let groups: Vec<usize> = seq
        .pulses()
        .iter()
        .map(|p| match p.role {
            PulseRole::Write => 0,
            PulseRole::Data => 1,
            PulseRole::Read if p.start < cfg.read_time + 0.5 * sep => 2,
            PulseRole::Read => 3,
        })
        .collect();
    let centre = cfg.read_time + cfg.first_bin + sep;
    let n = (sep / cfg.dt).round() as usize;
    let grid = TraceGrid {
        start: centre - 0.5 * n as f64 * cfg.dt,
        dt: cfg.dt,
        n,
    };
    let sample = ThinSample::new(&cfg.line, cfg.t2, grid.end(), cfg.min_bins)?;
    let mut comps =
        phase_cycled_components(&seq, &sample, &grid, &groups, &[vec![-1, 1, 1, 0], vec![-1, 1, 0, 1]])?;
    let second_read = comps.pop().expect("two components");
    let first_read = comps.pop().expect("two components");
    Ok(CentralSlot {
        grid,
        first_read,
        second_read,
    })
}

/// Intensity in the central slot versus the phase of one read pulse.
pub fn fringe_scan(stored: &TimeBinState, cfg: &TimeBinFringeConfig) -> Result<FringeScan> {
    let slot = central_slot(stored, cfg)?;
    let dt = slot.grid.dt;
    let (fixed, scanned) = match cfg.scanned {
        ScannedRead::First => (&slot.second_read, &slot.first_read),
        ScannedRead::Second => (&slot.first_read, &slot.second_read),
    };
    let e_sum: f64 = fixed.iter().chain(scanned).map(|v| v.norm_sqr()).sum::<f64>() * dt;
    let cross: Complex64 = fixed.iter().zip(scanned).map(|(a, b)| a.conj() * b).sum::<Complex64>() * dt;
    if !(e_sum > 0.0) {
        return Err(Error::AnalysisFailure {
            reason: "no light in the central slot".into(),
            residual: 0.0,
        });
    }
    noisy_scan(e_sum, cross, cfg.points, cfg.noise, 0.0)
}

/// Two ensembles fed from one input; their two-pulse echoes recombine on a
/// beam splitter with interferometer phase θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualMemoryConfig {
    pub line: LineShape,
    pub t2: f64,
    pub tau: f64,
    pub areas: (f64, f64),
    /// Optical depth of each arm; the thin-sample echo field scales with it.
    pub depths: (f64, f64),
    pub dt: f64,
    pub points: usize,
    pub noise: PhaseNoise,
    /// Atoms per ensemble, for the coherent N² versus incoherent N scaling.
    pub atoms: f64,
    /// Incoherent emission per decohered atom (zero by default).
    pub background: f64,
    pub min_bins: usize,
}

impl DualMemoryConfig {
    pub fn new(line: LineShape, t2: f64, tau: f64) -> Self {
        Self {
            line,
            t2,
            tau,
            areas: (PI / 2.0, PI),
            depths: (0.1, 0.1),
            dt: 0.01,
            points: 24,
            noise: PhaseNoise::default(),
            atoms: 1e6,
            background: 0.0,
            min_bins: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualMemoryFringe {
    pub scan: FringeScan,
    /// Echo energy of each arm (coherent part).
    pub echo_energies: [f64; 2],
    /// V of two-beam interference computed from the arm energies.
    pub expected_visibility: f64,
}

pub fn dual_memory_fringe(cfg: &DualMemoryConfig) -> Result<DualMemoryFringe> {
    ensure(cfg.depths.0 >= 0.0 && cfg.depths.1 >= 0.0, "depths", || "optical depths must be non-negative".into())?;
    ensure(cfg.atoms >= 1.0, "atoms", || format!("need at least one atom, got {}", cfg.atoms))?;
    ensure(cfg.background >= 0.0, "background", || "background must be non-negative".into())?;
    ensure(cfg.dt > 0.0, "dt", || format!("time step must be positive, got {}", cfg.dt))?;
    // The echo envelope is the Fourier transform of the line; 10/Γ holds it.
    let half = 10.0 / cfg.line.width;
    let n = (2.0 * half / cfg.dt).ceil() as usize + 1;
    let grid = TraceGrid {
        start: 2.0 * cfg.tau - half,
        dt: cfg.dt,
        n,
    };
    let trace = two_pulse_echo_on(cfg.tau, cfg.areas, &cfg.line, cfg.t2, grid, cfg.min_bins)?;
    let scale = |d: f64| cfg.atoms * 0.5 * d;
    let arm1: Vec<Complex64> = trace.polarization.iter().map(|p| p * scale(cfg.depths.0)).collect();
    let arm2: Vec<Complex64> = trace.polarization.iter().map(|p| p * scale(cfg.depths.1)).collect();
    let e1 = arm1.iter().map(|v| v.norm_sqr()).sum::<f64>() * cfg.dt;
    let e2 = arm2.iter().map(|v| v.norm_sqr()).sum::<f64>() * cfg.dt;
    let cross: Complex64 = arm1.iter().zip(&arm2).map(|(a, b)| a.conj() * b).sum::<Complex64>() * cfg.dt;
    if !(e1 + e2 > 0.0) {
        return Err(Error::AnalysisFailure {
            reason: "neither arm emits an echo".into(),
            residual: 0.0,
        });
    }
    let n_inc = if cfg.t2.is_infinite() {
        0.0
    } else {
        cfg.atoms * (1.0 - (-2.0 * cfg.tau / cfg.t2).exp())
    };
    let background = cfg.background * 2.0 * n_inc;
    let scan = noisy_scan(e1 + e2, cross, cfg.points, cfg.noise, background)?;
    Ok(DualMemoryFringe {
        scan,
        echo_energies: [e1, e2],
        expected_visibility: 2.0 * (e1 * e2).sqrt() / (e1 + e2),
    })
}

/// Ratio of coherent to incoherent emission.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CollectiveSnr {
    /// No atom has decohered yet.
    NoiseFree,
    Ratio(f64),
}

/// N_coh²/N_inc with N_coh = N·e^{−2τ/T₂} and N_inc = N − N_coh.
pub fn collective_snr(atoms: f64, tau: f64, t2: f64) -> Result<CollectiveSnr> {
    ensure(atoms >= 1.0, "atoms", || format!("need at least one atom, got {atoms}"))?;
    ensure(t2 > 0.0, "t2", || format!("T2 must be positive, got {t2}"))?;
    ensure(tau >= 0.0, "tau", || format!("storage time must be non-negative, got {tau}"))?;
    let coh = atoms * (-2.0 * tau / t2).exp();
    let inc = atoms - coh;
    if inc <= 0.0 {
        return Ok(CollectiveSnr::NoiseFree);
    }
    Ok(CollectiveSnr::Ratio(coh * coh / inc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{build_line_shape, LineKind};
    use crate::mhz;
    use crate::timebin::WavepacketShape;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn fit_recovers_injected_fringe() {
        let phases: Vec<f64> = (0..17).map(|k| k as f64 * 0.37).collect();
        let y: Vec<f64> = phases.iter().map(|t| 2.0 * (1.0 + 0.63 * (t - 0.8).cos())).collect();
        let fit = fit_fringe(&phases, &y).unwrap();
        assert_relative_eq!(fit.visibility, 0.63, epsilon = 1e-12);
        assert_relative_eq!(fit.phase, 0.8, epsilon = 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn degenerate_fits_fail() {
        assert!(fit_fringe(&[0.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(fit_fringe(&[0.5, 0.5, 0.5], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_fringe(&[0.0, 2.0, 4.0], &[-1.0, -1.0, -1.0]).is_err());
    }

    #[test]
    fn noise_calibration() {
        let s = phase_noise_for_visibility(0.915).unwrap();
        assert_relative_eq!(s, 0.42150, epsilon = 1e-5);
        assert_relative_eq!(fidelity_from_visibility(0.915).unwrap(), 0.9575, epsilon = 1e-15);
        assert!(fidelity_from_visibility(1.2).is_err());
    }

    #[test]
    fn snr_values() {
        match collective_snr(1e6, 1.0, 1.0).unwrap() {
            CollectiveSnr::Ratio(r) => {
                let c = 1e6 * (-2.0f64).exp();
                assert_relative_eq!(r, c * c / (1e6 - c), max_relative = 1e-12);
                assert_relative_eq!(r, 2.1e4, max_relative = 0.01);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(collective_snr(1e6, 0.0, 1.0).unwrap(), CollectiveSnr::NoiseFree);
        match collective_snr(1e6, 500.0, 1.0).unwrap() {
            CollectiveSnr::Ratio(r) => assert!(r < 1e-300),
            other => panic!("{other:?}"),
        }
    }

    fn dual(depths: (f64, f64), tau: f64, noise: PhaseNoise) -> DualMemoryFringe {
        let line = build_line_shape(LineKind::Gaussian, 0.0, mhz(2.0)).unwrap();
        let mut cfg = DualMemoryConfig::new(line, 4.0, tau);
        cfg.depths = depths;
        cfg.noise = noise;
        dual_memory_fringe(&cfg).unwrap()
    }

    #[test]
    fn symmetric_arms_give_full_visibility() {
        let r = dual((0.1, 0.1), 0.5, PhaseNoise::default());
        assert_relative_eq!(r.scan.visibility, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn unequal_arms_follow_two_beam_formula() {
        let r = dual((0.1, 0.4), 0.5, PhaseNoise::default());
        let [e1, e2] = r.echo_energies;
        assert_relative_eq!(e2 / e1, 16.0, max_relative = 1e-12);
        assert_relative_eq!(r.scan.visibility, 8.0 / 17.0, epsilon = 1e-9);
        assert_relative_eq!(r.scan.visibility, r.expected_visibility, epsilon = 1e-9);
    }

    #[test]
    fn timebin_fringe_balanced_reads() {
        let line = build_line_shape(LineKind::Gaussian, 0.0, mhz(4.0)).unwrap();
        let shape = WavepacketShape::Gaussian { fwhm: 0.4 };
        let st = TimeBinState::new(0.5f64.sqrt(), 0.5f64.sqrt(), 0.0, 1.6, shape).unwrap();
        let cfg = TimeBinFringeConfig::new(line.clone(), 1.5, 4.5);
        let scan = fringe_scan(&st, &cfg).unwrap();
        assert!(scan.visibility > 0.99, "V = {}", scan.visibility);
        let single = TimeBinState::new(1.0, 0.0, 0.0, 1.6, shape).unwrap();
        let scan = fringe_scan(&single, &cfg).unwrap();
        // Only the tails of the neighbouring slots reach the central window.
        assert!(scan.visibility < 1e-3, "V = {}", scan.visibility);
        assert_relative_eq!(scan.fidelity, 0.5, epsilon = 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fitted_visibility_recovers_injection(v in 0.0..1.0f64, phase in -3.0..3.0f64, offset in 0.1..10.0f64, n in 5usize..40) {
            let phases: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
            let y: Vec<f64> = phases.iter().map(|t| offset * (1.0 + v * (t - phase).cos())).collect();
            let fit = fit_fringe(&phases, &y).unwrap();
            prop_assert!((fit.visibility - v).abs() < 1e-3);
            let f = fidelity_from_visibility(fit.visibility).unwrap();
            prop_assert!((f - 0.5 * (1.0 + fit.visibility)).abs() == 0.0);
        }
    }
}
