//! Scenario files: TOML, microseconds and MHz, unknown keys rejected.

use std::path::{Path, PathBuf};

use crib_core::crib::RecallMode;
use crib_core::echo::PulseRole;
use crib_core::ensemble::{BroadeningMode, Kernel, LineKind};
use crib_core::fringe::ScannedRead;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Crib,
    Echo,
    Timebin,
    Fringe,
    Repeater,
    Sweep,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Crib => "crib",
            Kind::Echo => "echo",
            Kind::Timebin => "timebin",
            Kind::Fringe => "fringe",
            Kind::Repeater => "repeater",
            Kind::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridBlock,
    pub crib: Option<CribBlock>,
    pub echo: Option<EchoBlock>,
    pub timebin: Option<TimeBinBlock>,
    pub fringe: Option<FringeBlock>,
    pub repeater: Option<RepeaterBlock>,
    pub sweep: Option<SweepBlock>,
}

/// Overrides of the medium resolution; `scale` multiplies every resolution
/// including the input sampling rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub n_bins: Option<usize>,
    pub nz: Option<usize>,
    pub cutoff: Option<f64>,
    #[serde(default = "one")]
    pub scale: f64,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self {
            n_bins: None,
            nz: None,
            cutoff: None,
            scale: 1.0,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn inf() -> f64 {
    f64::INFINITY
}
fn yes() -> bool {
    true
}
fn default_dt() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineBlock {
    pub kind: LineKind,
    pub width_mhz: f64,
    #[serde(default)]
    pub center_mhz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeBlock {
    pub pit_width_mhz: f64,
    pub spike_width_mhz: f64,
    #[serde(default)]
    pub homogeneous_width_mhz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputShape {
    Gaussian,
    Square,
    DoubleBin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBlock {
    pub shape: InputShape,
    /// Intensity FWHM of the Gaussian (or of each double-bin wavepacket).
    pub fwhm_us: Option<f64>,
    /// Length of the square pulse.
    pub duration_us: Option<f64>,
    /// Bin separation of the double-bin pulse.
    pub separation_us: Option<f64>,
    pub record_us: f64,
    #[serde(default = "default_dt")]
    pub dt_us: f64,
    #[serde(default)]
    pub carrier_mhz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CribBlock {
    #[serde(default)]
    pub mode: BroadeningMode,
    /// Transverse: total induced width. Longitudinal: spread across the sample.
    pub broadening_mhz: f64,
    #[serde(default)]
    pub kernel: Kernel,
    pub depth: f64,
    pub recall: RecallMode,
    pub line: LineBlock,
    pub spike: Option<SpikeBlock>,
    #[serde(default = "inf")]
    pub t2_us: f64,
    pub switch_time_us: Option<f64>,
    #[serde(default = "one")]
    pub transfer_efficiency: f64,
    #[serde(default)]
    pub reverse_gradient: bool,
    #[serde(default = "one")]
    pub length: f64,
    #[serde(default = "yes")]
    pub check_oracle: bool,
    /// Recall window in units of the input record.
    #[serde(default = "one")]
    pub recall_window: f64,
    pub input: Option<InputBlock>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EchoExperiment {
    TwoPulse,
    Stimulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseBlock {
    pub start_us: f64,
    #[serde(default)]
    pub duration_us: f64,
    pub area: f64,
    #[serde(default)]
    pub phase: f64,
    pub role: PulseRole,
}

/// A Gaussian data pulse, applied as piecewise-constant segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapedDataBlock {
    pub center_us: f64,
    pub fwhm_us: f64,
    pub area: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EchoBlock {
    pub experiment: EchoExperiment,
    pub line: LineBlock,
    #[serde(default = "inf")]
    pub t2_us: f64,
    #[serde(default = "echo_dt")]
    pub dt_us: f64,
    #[serde(default = "min_bins")]
    pub min_bins: usize,
    /// Two-pulse: separation and areas.
    pub tau_us: Option<f64>,
    pub areas: Option<[f64; 2]>,
    /// Stimulated: pulses, optional shaped data and the sampled window.
    #[serde(default)]
    pub pulses: Vec<PulseBlock>,
    pub data: Option<ShapedDataBlock>,
    pub window_start_us: Option<f64>,
    pub window_us: Option<f64>,
}

fn echo_dt() -> f64 {
    0.01
}
fn min_bins() -> usize {
    400
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBinBlock {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub phi: f64,
    pub bin_separation_us: f64,
    pub fwhm_us: f64,
    #[serde(default)]
    pub carrier_mhz: f64,
    #[serde(default = "default_dt")]
    pub dt_us: f64,
    /// Empty time before the early bin and after the late one.
    pub margin_us: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FringeExperiment {
    Timebin,
    DualMemory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    /// Phase-noise width in radians; exclusive with `target_visibility`.
    pub sigma: Option<f64>,
    /// Calibrate σ so that a perfect fringe drops to this visibility.
    pub target_visibility: Option<f64>,
    #[serde(default = "default_shots")]
    pub shots: usize,
}

fn default_shots() -> usize {
    4000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FringeBlock {
    pub experiment: FringeExperiment,
    pub line: LineBlock,
    #[serde(default = "inf")]
    pub t2_us: f64,
    #[serde(default = "fringe_points")]
    pub points: usize,
    pub noise: Option<NoiseBlock>,
    pub dt_us: Option<f64>,
    pub min_bins: Option<usize>,
    // Time-bin analyser.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub phi: Option<f64>,
    pub bin_separation_us: Option<f64>,
    pub fwhm_us: Option<f64>,
    pub first_bin_us: Option<f64>,
    pub read_time_us: Option<f64>,
    pub read_areas: Option<[f64; 2]>,
    pub read_phases: Option<[f64; 2]>,
    pub scanned: Option<ScannedRead>,
    pub data_area: Option<f64>,
    // Two-memory interferometer.
    pub tau_us: Option<f64>,
    pub depths: Option<[f64; 2]>,
    pub atoms: Option<f64>,
    pub background: Option<f64>,
}

fn fringe_points() -> usize {
    24
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeaterBlock {
    pub attenuation_db_per_km: f64,
    pub segment_length_km: f64,
    pub total_length_km: Option<f64>,
    #[serde(default = "speed")]
    pub speed_km_per_s: f64,
    #[serde(default = "one_u64")]
    pub modes: u64,
    #[serde(default = "one")]
    pub memory_efficiency: f64,
    #[serde(default = "inf")]
    pub memory_lifetime_s: f64,
    #[serde(default = "one")]
    pub p_swap: f64,
    #[serde(default = "one")]
    pub p_pair: f64,
    #[serde(default = "half")]
    pub p_bsm_mid: f64,
    #[serde(default = "trials")]
    pub trials: u64,
    #[serde(default = "max_rounds")]
    pub max_rounds: u64,
}

fn speed() -> f64 {
    crib_core::repeater::FIBER_LIGHT_SPEED
}
fn one_u64() -> u64 {
    1
}
fn half() -> f64 {
    0.5
}
fn trials() -> u64 {
    100_000
}
fn max_rounds() -> u64 {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Base scenario, relative to this file.
    pub base: PathBuf,
    /// Dotted path of a numeric key in the base scenario, e.g. `crib.depth`.
    pub parameter: String,
    pub values: Vec<f64>,
    /// Summary fields to tabulate; defaults depend on the base kind.
    pub columns: Option<Vec<String>>,
}

/// A scenario file parsed both as raw TOML (for hashing and sweeps) and as
/// a typed [`Scenario`].
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub path: PathBuf,
    pub raw: toml::Table,
    pub bytes: Vec<u8>,
    pub scenario: Scenario,
}

pub fn parse_table(text: &str, origin: &str) -> Result<toml::Table, CliError> {
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Validation(format!("{origin}: {e}")))
}

pub fn from_table(table: toml::Table, origin: &str) -> Result<Scenario, CliError> {
    let s: Scenario = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::Validation(format!("{origin}: {}", inner.message()))
        } else {
            CliError::Validation(format!("{origin}: {path}: {}", inner.message()))
        }
    })?;
    s.check_blocks()?;
    Ok(s)
}

pub fn load(path: &Path) -> Result<LoadedScenario, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Validation(format!("{} is not UTF-8", path.display())))?;
    let origin = path.display().to_string();
    let raw = parse_table(&text, &origin)?;
    let scenario = from_table(raw.clone(), &origin)?;
    Ok(LoadedScenario {
        path: path.to_path_buf(),
        raw,
        bytes,
        scenario,
    })
}

impl Scenario {
    /// The block named by `kind` must be present; blocks for other kinds
    /// are rejected so that a typo cannot silently go unused.
    fn check_blocks(&self) -> Result<(), CliError> {
        let present = [
            ("crib", self.crib.is_some()),
            ("echo", self.echo.is_some()),
            ("timebin", self.timebin.is_some()),
            ("fringe", self.fringe.is_some()),
            ("repeater", self.repeater.is_some()),
            ("sweep", self.sweep.is_some()),
        ];
        let needed: &[&str] = match self.kind {
            Kind::Crib => &["crib"],
            Kind::Echo => &["echo"],
            Kind::Timebin => &["timebin", "crib"],
            Kind::Fringe => &["fringe"],
            Kind::Repeater => &["repeater"],
            Kind::Sweep => &["sweep"],
        };
        for (block, is_present) in present {
            let wanted = needed.contains(&block);
            if wanted && !is_present {
                return Err(CliError::Validation(format!(
                    "{block}: a `{}` scenario needs a [{block}] table",
                    self.kind.name()
                )));
            }
            if !wanted && is_present {
                return Err(CliError::Validation(format!(
                    "{block}: table is not used by a `{}` scenario",
                    self.kind.name()
                )));
            }
        }
        if self.grid.scale <= 0.0 || !self.grid.scale.is_finite() {
            return Err(CliError::Validation(format!(
                "grid.scale: must be positive, got {}",
                self.grid.scale
            )));
        }
        Ok(())
    }
}
