//! CRIB protocol orchestration and its closed-form efficiency laws.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    apply_broadening, flip_detunings, prepare_spike, BroadeningControl, GridSettings, LineShape, Medium,
};
use crate::error::{ensure, Error, Result};
use crate::oracle::linear_transfer_oracle;
use crate::signal::{best_overlap, relative_rms};
use crate::solver::{absorb, mode_match, recall, EnsembleState};
use crate::waveform::{Direction, Waveform};

/// Which closed-form efficiency law to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfficiencyKind {
    TransverseBackward,
    TransverseForward,
    Longitudinal,
}

/// (1 − e^{−d})² for backward transverse and longitudinal recall, d²e^{−d}
/// for forward transverse recall.
pub fn efficiency_formula(kind: EfficiencyKind, depth: f64) -> Result<f64> {
    ensure(depth >= 0.0, "depth", || format!("optical depth must be non-negative, got {depth}"))?;
    Ok(match kind {
        EfficiencyKind::TransverseBackward | EfficiencyKind::Longitudinal => {
            if depth.is_infinite() {
                1.0
            } else {
                (1.0 - (-depth).exp()).powi(2)
            }
        }
        EfficiencyKind::TransverseForward => {
            if depth.is_infinite() {
                0.0
            } else {
                depth * depth * (-depth).exp()
            }
        }
    })
}

/// Energy below which a waveform is treated as empty by [`chirp_metric`].
pub const CHIRP_ENERGY_FLOOR: f64 = 1e-14;

/// Least-squares slope of the instantaneous frequency over the central
/// 80 % of the pulse energy (rad per time unit squared).
pub fn chirp_metric(w: &Waveform) -> Result<f64> {
    let energy = w.energy();
    if !(energy > CHIRP_ENERGY_FLOOR) {
        return Err(Error::UndefinedMetric(format!(
            "waveform energy {energy:.3e} is below the chirp threshold {CHIRP_ENERGY_FLOOR:.1e}"
        )));
    }
    let intensity = w.intensity();
    let total: f64 = intensity.iter().sum();
    let mut acc = 0.0;
    let (mut lo, mut hi) = (0, w.len() - 1);
    let mut found_lo = false;
    for (i, v) in intensity.iter().enumerate() {
        acc += v;
        if !found_lo && acc >= 0.1 * total {
            lo = i;
            found_lo = true;
        }
        if acc >= 0.9 * total {
            hi = i;
            break;
        }
    }
    let lo = lo.max(1);
    let hi = hi.min(w.len() - 2);
    if hi < lo + 2 {
        return Err(Error::UndefinedMetric(
            "central energy window spans fewer than three samples".into(),
        ));
    }
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .map(|i| {
            let d = w.samples[i + 1] * w.samples[i - 1].conj();
            (w.time(i), d.arg() / (2.0 * w.dt))
        })
        .collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mf = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, f)| (t - mt) * (f - mf)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    Ok(sxy / sxx)
}

/// How the prepared line is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinePreparation {
    /// Hole burning a pit into `parent` and leaving a spike.
    Spike {
        parent: LineShape,
        pit_width: f64,
        spike_width: f64,
        #[serde(default)]
        homogeneous_width: f64,
    },
    /// Use a line as is.
    Direct(LineShape),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMode {
    Forward,
    Backward,
}

/// Everything needed for one absorb–store–recall run.
#[derive(Clone, Debug, PartialEq)]
pub struct CribScenario {
    pub preparation: LinePreparation,
    pub control: BroadeningControl,
    pub length: f64,
    /// αL (transverse) or (αL)_eff (longitudinal).
    pub depth: f64,
    pub t2: f64,
    pub grid: GridSettings,
    pub input: Waveform,
    pub recall: RecallMode,
    /// Samples in the recall window; defaults to the input length.
    pub recall_samples: Option<usize>,
    /// Start with the detunings reversed (χ → −χ for a gradient).
    pub reverse_gradient: bool,
    /// Also run the frequency-domain oracle on the absorption step.
    pub check_oracle: bool,
}

/// Numbers describing how a run was discretized and how well it converged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CribDiagnostics {
    pub n_bins: usize,
    pub nz: usize,
    pub dt: f64,
    pub coupling: f64,
    pub flip_time: f64,
    pub input_energy: f64,
    pub transmitted_energy: f64,
    pub recalled_energy: f64,
    pub residual_energy: f64,
    pub oracle_rms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CribResult {
    pub transmitted: Waveform,
    pub recalled: Waveform,
    pub efficiency: f64,
    /// Normalized overlap of the recalled field with the time-reversed input.
    pub overlap_fidelity: f64,
    /// None when the recalled energy is too small to define a chirp.
    pub chirp_metric: Option<f64>,
    /// Time from the end of the input record to the start of recall.
    pub storage_time: f64,
    pub state_after_recall: EnsembleState,
    pub diagnostics: CribDiagnostics,
}

impl CribScenario {
    /// Prepared line after hole burning (or the direct line).
    pub fn prepared_line(&self) -> Result<LineShape> {
        match &self.preparation {
            LinePreparation::Spike {
                parent,
                pit_width,
                spike_width,
                homogeneous_width,
            } => prepare_spike(parent, *pit_width, *spike_width, *homogeneous_width),
            LinePreparation::Direct(line) => Ok(line.clone()),
        }
    }

    /// Builds the medium, flipped first when `reverse_gradient` is set.
    pub fn medium(&self) -> Result<Medium> {
        let line = self.prepared_line()?;
        let map = apply_broadening(&line, &self.control)?;
        let medium = Medium::new(map, self.control.clone(), self.length, self.depth, self.t2, self.grid)?;
        if self.reverse_gradient {
            flip_detunings(&medium)
        } else {
            Ok(medium)
        }
    }
}

/// Runs hole burning → broadening → absorption → storage → (mode matching) →
/// flip → recall.
pub fn run_crib(scenario: &CribScenario) -> Result<CribResult> {
    let input = &scenario.input;
    ensure(input.direction == Direction::Forward, "input.direction", || {
        "the input pulse must travel forward".into()
    })?;
    let medium = scenario.medium()?;
    let (transmitted, state) = absorb(input, &medium)?;
    let oracle_rms = if scenario.check_oracle {
        let reference = linear_transfer_oracle(input, &medium)?;
        Some(relative_rms(&transmitted.samples, &reference.samples))
    } else {
        None
    };

    let record = input.end_time() - input.start_time;
    let storage_time = match scenario.control.switch_time {
        Some(ts) => {
            let wait = ts - record;
            ensure(wait >= -0.5 * input.dt, "switch_time", || {
                format!("switch time {ts} falls inside the input record (length {record})")
            })?;
            wait.max(0.0)
        }
        None => 0.0,
    };
    let state = state.wait(storage_time, &medium)?;
    let state = match scenario.recall {
        RecallMode::Backward => mode_match(&state, scenario.control.transfer_efficiency)?,
        RecallMode::Forward => state,
    };
    let flipped = flip_detunings(&medium)?;
    let n_recall = scenario.recall_samples.unwrap_or(input.len());
    let (recalled, after) = recall(&state, &flipped, n_recall)?;

    let e_in = input.energy();
    let efficiency = recalled.energy() / e_in;
    let overlap_fidelity = best_overlap(&input.time_reversed().samples, &recalled.samples).0;
    let chirp = chirp_metric(&recalled).ok().filter(|_| efficiency > 1e-9);
    let residual = after.stored_energy(&flipped);
    let diagnostics = CribDiagnostics {
        n_bins: medium.n_bins(),
        nz: medium.nz,
        dt: input.dt,
        coupling: medium.coupling(),
        flip_time: state.timestamp,
        input_energy: e_in,
        transmitted_energy: transmitted.energy(),
        recalled_energy: recalled.energy(),
        residual_energy: residual,
        oracle_rms,
    };
    Ok(CribResult {
        transmitted,
        recalled,
        efficiency,
        overlap_fidelity,
        chirp_metric: chirp,
        storage_time,
        state_after_recall: after,
        diagnostics,
    })
}

/// Scales an input waveform; convenience for linearity checks.
pub fn scaled_scenario(scenario: &CribScenario, a: Complex64) -> CribScenario {
    CribScenario {
        input: scenario.input.scaled(a),
        ..scenario.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn formula_values() {
        let f = |k, d| efficiency_formula(k, d).unwrap();
        assert_relative_eq!(f(EfficiencyKind::TransverseForward, 2.0), 0.5413, epsilon = 1e-4);
        assert_eq!(f(EfficiencyKind::TransverseBackward, 0.0), 0.0);
        assert_eq!(f(EfficiencyKind::TransverseBackward, f64::INFINITY), 1.0);
        assert_relative_eq!(f(EfficiencyKind::Longitudinal, 0.8), 0.30324, epsilon = 1e-5);
        assert_relative_eq!(f(EfficiencyKind::TransverseBackward, 4.0), 0.9637, epsilon = 1e-4);
        assert!(efficiency_formula(EfficiencyKind::Longitudinal, -1.0).is_err());
    }

    #[test]
    fn forward_formula_peaks_at_two() {
        let best = (0..4000)
            .map(|i| i as f64 * 0.001)
            .max_by(|a, b| {
                let fa = efficiency_formula(EfficiencyKind::TransverseForward, *a).unwrap();
                let fb = efficiency_formula(EfficiencyKind::TransverseForward, *b).unwrap();
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert_relative_eq!(best, 2.0, epsilon = 1e-3);
    }

    #[test]
    fn chirp_of_synthetic_ramp() {
        let rate = 0.8;
        let w = Waveform::from_fn(2000, 0.01, |t| {
            let x = (t - 10.0) / 2.0;
            Complex64::from_polar((-x * x).exp(), 0.5 * rate * (t - 10.0).powi(2))
        })
        .unwrap();
        assert_relative_eq!(chirp_metric(&w).unwrap(), rate, max_relative = 0.02);
    }

    #[test]
    fn chirp_of_empty_pulse_is_undefined() {
        let w = Waveform::new(vec![Complex64::new(0.0, 0.0); 10], 0.1).unwrap();
        assert!(matches!(chirp_metric(&w), Err(Error::UndefinedMetric(_))));
    }
}
