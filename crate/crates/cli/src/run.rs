//! Builds library inputs from a scenario, runs the experiment and collects
//! the artifacts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crib_core::crib::{
    efficiency_formula, run_crib, CribResult, CribScenario, EfficiencyKind, LinePreparation,
    RecallMode,
};
use crib_core::echo::{
    pulses_from_waveform, stimulated_echo, two_pulse_echo, EchoSettings, EchoTrace, Pulse,
    PulseRole, PulseSequence, TraceGrid,
};
use crib_core::ensemble::{
    build_line_shape, BroadeningControl, BroadeningMode, GridSettings, LineShape,
};
use crib_core::fringe::{
    collective_snr, dual_memory_fringe, fringe_scan, phase_noise_for_visibility, DualMemoryConfig,
    FringeScan, PhaseNoise, TimeBinFringeConfig,
};
use crib_core::repeater::{
    channel_transmission, memory_usefulness, min_efficiency, min_storage_time, rounds_histogram,
    simulate_repeater, ChannelSpec, RepeaterConfig,
};
use crib_core::signal::normalized_correlation;
use crib_core::timebin::{analyze_timebin, TimeBinState, WavepacketShape};
use crib_core::waveform::{wrap_signed, Waveform};
use crib_core::{mhz, Complex64};
use serde_json::{json, Value};

use crate::output::{commit, sha256_hex, to_value, Artifacts};
use crate::scenario::{
    CribBlock, EchoBlock, EchoExperiment, FringeBlock, FringeExperiment, GridBlock, InputBlock,
    InputShape, Kind, LineBlock, LoadedScenario, NoiseBlock, RepeaterBlock, TimeBinBlock,
};
use crate::{CliError, CoreContext};

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    /// Multiplies the scenario's own grid scale.
    pub grid_scale: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: None,
            grid_scale: 1.0,
        }
    }
}

/// Result of one scenario (or one sweep point) before it is written.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: Value,
    pub artifacts: Artifacts,
    /// Resolution actually used, for the manifest.
    pub grid: Value,
    /// Files read besides the scenario itself, as (path, sha256).
    pub inputs: Vec<(String, String)>,
}

/// Resolution shared by every experiment of a run.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Resolution {
    pub scale: f64,
    pub grid: GridSettings,
}

impl Resolution {
    pub fn new(block: &GridBlock, extra_scale: f64) -> Result<Self, CliError> {
        let scale = block.scale * extra_scale;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(CliError::Validation(format!(
                "grid.scale: must be positive, got {scale}"
            )));
        }
        let mut g = GridSettings::default();
        if let Some(n) = block.n_bins {
            g.n_bins = n;
        }
        if let Some(n) = block.nz {
            g.nz = n;
        }
        if let Some(c) = block.cutoff {
            g.cutoff = c;
        }
        if g.n_bins < 2 || g.nz < 2 || !(g.cutoff > 0.0) {
            return Err(CliError::Validation(
                "grid: n_bins and nz must be at least 2 and cutoff positive".into(),
            ));
        }
        Ok(Self {
            scale,
            grid: g.scaled(scale),
        })
    }

    fn dt(&self, base: f64, path: &str) -> Result<f64, CliError> {
        positive(base, path)?;
        Ok(base / self.scale)
    }

    fn bins(&self, base: usize) -> usize {
        ((base as f64) * self.scale).round().max(1.0) as usize
    }

    fn describe(&self, dt: Option<f64>) -> Value {
        json!({
            "scale": self.scale,
            "n_bins": self.grid.n_bins,
            "nz": self.grid.nz,
            "cutoff": self.grid.cutoff,
            "dt_us": dt,
        })
    }
}

fn positive(x: f64, path: &str) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{path}: must be positive, got {x}"
        )))
    }
}

fn required<T: Copy>(v: Option<T>, path: &str, why: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Validation(format!("{path}: required {why}")))
}

fn unused(set: bool, path: &str, why: &str) -> Result<(), CliError> {
    if set {
        Err(CliError::Validation(format!("{path}: not used {why}")))
    } else {
        Ok(())
    }
}

pub(crate) fn line(b: &LineBlock, path: &str) -> Result<LineShape, CliError> {
    build_line_shape(b.kind, mhz(b.center_mhz), mhz(b.width_mhz)).ctx(path)
}

fn waveform_csv_name(name: &str) -> String {
    format!("{name}.csv")
}

/// Runs a loaded scenario without writing anything.
pub fn execute(loaded: &LoadedScenario, opts: &RunOptions) -> Result<RunOutput, CliError> {
    let s = &loaded.scenario;
    let res = Resolution::new(&s.grid, opts.grid_scale)?;
    let seed = opts.seed.or(s.seed).unwrap_or(0);
    match s.kind {
        Kind::Crib => run_crib_kind(s.crib.as_ref().expect("checked at load"), &res),
        Kind::Echo => run_echo(s.echo.as_ref().expect("checked at load"), &res),
        Kind::Timebin => run_timebin(
            s.timebin.as_ref().expect("checked at load"),
            s.crib.as_ref().expect("checked at load"),
            &res,
        ),
        Kind::Fringe => run_fringe(s.fringe.as_ref().expect("checked at load"), &res, seed),
        Kind::Repeater => run_repeater(s.repeater.as_ref().expect("checked at load"), seed),
        Kind::Sweep => crate::sweep::run_sweep(loaded, opts),
    }
}

/// Runs a scenario and commits its artifacts and manifest to the output
/// directory: the `--out-dir` flag, else the scenario's `out_dir` (relative
/// to the scenario file).
pub fn run_to_dir(
    loaded: &LoadedScenario,
    opts: &RunOptions,
    out_dir: Option<&Path>,
) -> Result<(PathBuf, Value), CliError> {
    let s = &loaded.scenario;
    let out = match (out_dir, &s.out_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => loaded.path.parent().unwrap_or(Path::new(".")).join(d),
        (None, None) => {
            return Err(CliError::Validation(
                "out_dir: give --out-dir or set out_dir in the scenario".into(),
            ))
        }
    };
    let result = execute(loaded, opts)?;
    let mut artifacts = result.artifacts;
    artifacts.json("summary.json", &result.summary);
    let manifest = manifest(loaded, opts, &result.grid, &result.inputs);
    commit(&out, &artifacts, manifest)?;
    Ok((out, result.summary))
}

pub(crate) fn manifest(
    loaded: &LoadedScenario,
    opts: &RunOptions,
    grid: &Value,
    extra_inputs: &[(String, String)],
) -> Value {
    let s = &loaded.scenario;
    let inputs: Vec<Value> = extra_inputs
        .iter()
        .map(|(p, h)| json!({"path": p, "sha256": h}))
        .collect();
    json!({
        "scenario": {
            "name": s.name,
            "kind": s.kind.name(),
            "path": loaded.path.display().to_string(),
            "sha256": sha256_hex(&loaded.bytes),
        },
        "additional_inputs": inputs,
        "seed": opts.seed.or(s.seed).unwrap_or(0),
        "grid_scale_flag": opts.grid_scale,
        "grid": grid,
        "versions": {
            "crib-cli": env!("CARGO_PKG_VERSION"),
            "crib-core": crib_core::VERSION,
        },
        // Sweep points are independent; their order of execution does not
        // change any output.
        "order_independent": true,
    })
}

// ---------------------------------------------------------------- crib

fn default_input() -> InputBlock {
    InputBlock {
        shape: InputShape::Gaussian,
        fwhm_us: Some(3.0),
        duration_us: None,
        separation_us: None,
        record_us: 15.0,
        dt_us: 0.05,
        carrier_mhz: 0.0,
    }
}

pub(crate) fn input_waveform(b: &InputBlock, res: &Resolution) -> Result<Waveform, CliError> {
    let dt = res.dt(b.dt_us, "crib.input.dt_us")?;
    positive(b.record_us, "crib.input.record_us")?;
    let n = (b.record_us / dt).round() as usize + 1;
    let t_mid = 0.5 * (n - 1) as f64 * dt;
    let w = match b.shape {
        InputShape::Gaussian => {
            unused(
                b.duration_us.is_some(),
                "crib.input.duration_us",
                "by a gaussian input",
            )?;
            unused(
                b.separation_us.is_some(),
                "crib.input.separation_us",
                "by a gaussian input",
            )?;
            let fwhm = required(b.fwhm_us, "crib.input.fwhm_us", "for a gaussian input")?;
            Waveform::gaussian(n, dt, t_mid, fwhm).ctx("crib.input")?
        }
        InputShape::Square => {
            unused(
                b.fwhm_us.is_some(),
                "crib.input.fwhm_us",
                "by a square input",
            )?;
            unused(
                b.separation_us.is_some(),
                "crib.input.separation_us",
                "by a square input",
            )?;
            let d = required(
                b.duration_us,
                "crib.input.duration_us",
                "for a square input",
            )?;
            if d >= b.record_us {
                return Err(CliError::Validation(
                    "crib.input.duration_us: must be shorter than record_us".into(),
                ));
            }
            Waveform::square(n, dt, t_mid - 0.5 * d, d).ctx("crib.input")?
        }
        InputShape::DoubleBin => {
            unused(
                b.duration_us.is_some(),
                "crib.input.duration_us",
                "by a double_bin input",
            )?;
            let fwhm = required(b.fwhm_us, "crib.input.fwhm_us", "for a double_bin input")?;
            let sep = required(
                b.separation_us,
                "crib.input.separation_us",
                "for a double_bin input",
            )?;
            let h = std::f64::consts::FRAC_1_SQRT_2;
            let st = TimeBinState::new(h, h, 0.0, sep, WavepacketShape::Gaussian { fwhm })
                .ctx("crib.input")?;
            st.encode(n, dt, t_mid - 0.5 * sep).ctx("crib.input")?
        }
    };
    Ok(w.with_carrier(mhz(b.carrier_mhz)))
}

pub(crate) fn crib_scenario(
    b: &CribBlock,
    input: Waveform,
    res: &Resolution,
) -> Result<CribScenario, CliError> {
    let parent = line(&b.line, "crib.line")?;
    let preparation = match &b.spike {
        Some(sp) => LinePreparation::Spike {
            parent,
            pit_width: mhz(sp.pit_width_mhz),
            spike_width: mhz(sp.spike_width_mhz),
            homogeneous_width: mhz(sp.homogeneous_width_mhz),
        },
        None => LinePreparation::Direct(parent),
    };
    let control = BroadeningControl {
        mode: b.mode,
        magnitude: mhz(b.broadening_mhz),
        switch_time: b.switch_time_us,
        transfer_efficiency: b.transfer_efficiency,
        kernel: b.kernel,
    };
    control.validate().ctx("crib")?;
    positive(b.recall_window, "crib.recall_window")?;
    let recall_samples = Some(((input.len() as f64) * b.recall_window).round().max(2.0) as usize);
    let sc = CribScenario {
        preparation,
        control,
        length: b.length,
        depth: b.depth,
        t2: b.t2_us,
        grid: res.grid,
        input,
        recall: b.recall,
        recall_samples,
        reverse_gradient: b.reverse_gradient,
        check_oracle: b.check_oracle,
    };
    // Line preparation and medium construction check every remaining
    // precondition before the solver runs.
    sc.medium().ctx("crib")?;
    Ok(sc)
}

pub(crate) fn formula_kind(mode: BroadeningMode, recall: RecallMode) -> EfficiencyKind {
    match (mode, recall) {
        (BroadeningMode::Longitudinal, _) => EfficiencyKind::Longitudinal,
        (BroadeningMode::Transverse, RecallMode::Backward) => EfficiencyKind::TransverseBackward,
        (BroadeningMode::Transverse, RecallMode::Forward) => EfficiencyKind::TransverseForward,
    }
}

fn crib_summary(b: &CribBlock, r: &CribResult) -> Result<Value, CliError> {
    let kind = formula_kind(b.mode, b.recall);
    let formula = efficiency_formula(kind, b.depth).ctx("crib")?;
    Ok(json!({
        "depth": b.depth,
        "efficiency": r.efficiency,
        "efficiency_formula": formula,
        "formula": kind,
        "abs_diff": (r.efficiency - formula).abs(),
        "overlap_fidelity": r.overlap_fidelity,
        "chirp_metric": r.chirp_metric,
        "storage_time_us": r.storage_time,
        "diagnostics": to_value(&r.diagnostics),
    }))
}

fn run_crib_kind(b: &CribBlock, res: &Resolution) -> Result<RunOutput, CliError> {
    let input = input_waveform(b.input.as_ref().unwrap_or(&default_input()), res)?;
    let dt = input.dt;
    let sc = crib_scenario(b, input, res)?;
    let r = run_crib(&sc).ctx("crib")?;
    let mut a = Artifacts::new();
    a.waveform(&waveform_csv_name("input"), &sc.input);
    a.waveform(&waveform_csv_name("transmitted"), &r.transmitted);
    a.waveform(&waveform_csv_name("recalled"), &r.recalled);
    Ok(RunOutput {
        summary: crib_summary(b, &r)?,
        artifacts: a,
        grid: res.describe(Some(dt)),
        inputs: Vec::new(),
    })
}

// ---------------------------------------------------------------- timebin

fn run_timebin(t: &TimeBinBlock, c: &CribBlock, res: &Resolution) -> Result<RunOutput, CliError> {
    unused(
        c.input.is_some(),
        "crib.input",
        "by a timebin scenario; the state defines the input",
    )?;
    let shape = WavepacketShape::Gaussian { fwhm: t.fwhm_us };
    let state =
        TimeBinState::new(t.alpha, t.beta, t.phi, t.bin_separation_us, shape).ctx("timebin")?;
    let dt = res.dt(t.dt_us, "timebin.dt_us")?;
    let margin = t.margin_us.unwrap_or(shape.support() + 1.0);
    if margin < shape.support() {
        return Err(CliError::Validation(format!(
            "timebin.margin_us: must be at least {} to hold a bin",
            shape.support()
        )));
    }
    let record = t.bin_separation_us + 2.0 * margin;
    let n = (record / dt).round() as usize + 1;
    let input = state
        .encode(n, dt, margin)
        .ctx("timebin")?
        .with_carrier(mhz(t.carrier_mhz));
    let sc = crib_scenario(c, input, res)?;
    let r = run_crib(&sc).ctx("crib")?;
    // Recall reverses the record, so the late bin leads.
    let storage = r.recalled.start_time - sc.input.start_time;
    let lead = r.recalled.start_time + sc.input.end_time() - (margin + t.bin_separation_us);
    let an = analyze_timebin(&r.recalled, &state, lead, storage).ctx("timebin")?;
    let summary = json!({
        "input": to_value(&state),
        "analysis": to_value(&an),
        "efficiency": r.efficiency,
        "storage_time_us": storage,
        "fidelity": an.fidelity,
        // Before correction the leading bin carries β and the trailing one α.
        "swap_residual": (an.raw_alpha - state.beta).abs().max((an.raw_beta - state.alpha).abs()),
        "phase_residual": wrap_signed(an.raw_phi - state.phi - an.storage_phase),
    });
    let mut a = Artifacts::new();
    a.waveform("input.csv", &sc.input);
    a.waveform("recalled.csv", &r.recalled);
    Ok(RunOutput {
        summary,
        artifacts: a,
        grid: res.describe(Some(dt)),
        inputs: Vec::new(),
    })
}

// ---------------------------------------------------------------- echo

/// Latest intensity maximum after `after` and its height.
fn trace_peak(tr: &EchoTrace, after: f64) -> Value {
    let t = tr.peak_time_after(after);
    let height = t.map(|t| tr.peak_intensity_in(t - 0.5 * tr.grid.dt, t + 0.5 * tr.grid.dt));
    json!({
        "peak_time_us": t,
        "echo_intensity": height,
    })
}

fn run_echo(e: &EchoBlock, res: &Resolution) -> Result<RunOutput, CliError> {
    let ln = line(&e.line, "echo.line")?;
    let dt = res.dt(e.dt_us, "echo.dt_us")?;
    let min_bins = res.bins(e.min_bins);
    let mut a = Artifacts::new();
    let summary = match e.experiment {
        EchoExperiment::TwoPulse => {
            let tau = required(e.tau_us, "echo.tau_us", "for a two_pulse echo")?;
            unused(!e.pulses.is_empty(), "echo.pulses", "by a two_pulse echo")?;
            unused(e.data.is_some(), "echo.data", "by a two_pulse echo")?;
            unused(
                e.window_us.is_some(),
                "echo.window_us",
                "by a two_pulse echo",
            )?;
            unused(
                e.window_start_us.is_some(),
                "echo.window_start_us",
                "by a two_pulse echo",
            )?;
            let areas = e.areas.unwrap_or([PI / 2.0, PI]);
            let tr = two_pulse_echo(
                tau,
                (areas[0], areas[1]),
                &ln,
                e.t2_us,
                EchoSettings { dt, min_bins },
            )
            .ctx("echo")?;
            a.add("trace.csv", trace_bytes(&tr)?);
            let mut s = trace_peak(&tr, tau + 0.5 * tau.min(1.0));
            s["expected_peak_us"] = json!(2.0 * tau);
            s["intensity_at_2tau"] =
                json!(tr.peak_intensity_in(2.0 * tau - 0.5 * dt, 2.0 * tau + 0.5 * dt));
            s["tau_us"] = json!(tau);
            s
        }
        EchoExperiment::Stimulated => {
            unused(e.tau_us.is_some(), "echo.tau_us", "by a stimulated echo")?;
            unused(e.areas.is_some(), "echo.areas", "by a stimulated echo")?;
            let start = required(
                e.window_start_us,
                "echo.window_start_us",
                "for a stimulated echo",
            )?;
            let window = required(e.window_us, "echo.window_us", "for a stimulated echo")?;
            positive(window, "echo.window_us")?;
            let mut pulses: Vec<Pulse> = e
                .pulses
                .iter()
                .map(|p| Pulse {
                    start: p.start_us,
                    duration: p.duration_us,
                    area: p.area,
                    phase: p.phase,
                    role: p.role,
                })
                .collect();
            let data = match &e.data {
                Some(d) => {
                    positive(d.fwhm_us, "echo.data.fwhm_us")?;
                    let half = WavepacketShape::Gaussian { fwhm: d.fwhm_us }.support();
                    let n = (2.0 * half / dt).round() as usize + 1;
                    let w = Waveform::gaussian(n, dt, half, d.fwhm_us)
                        .ctx("echo.data")?
                        .with_start(d.center_us - half)
                        .scaled(Complex64::from_polar(1.0, d.phase));
                    let sum: f64 = w.samples.iter().map(|v| v.norm()).sum::<f64>() * dt;
                    pulses.extend(pulses_from_waveform(&w, d.area / sum, PulseRole::Data));
                    Some(w)
                }
                None => None,
            };
            let seq = PulseSequence::new(pulses).ctx("echo.pulses")?;
            let grid = TraceGrid {
                start,
                dt,
                n: (window / dt).round() as usize + 1,
            };
            let tr = stimulated_echo(&seq, &ln, e.t2_us, grid, min_bins).ctx("echo")?;
            a.add("trace.csv", trace_bytes(&tr)?);
            let mut s = trace_peak(&tr, start);
            s["copy_correlation"] = match &data {
                Some(w) => json!(normalized_correlation(&w.samples, &tr.polarization)),
                None => Value::Null,
            };
            s
        }
    };
    Ok(RunOutput {
        summary,
        artifacts: a,
        grid: json!({"scale": res.scale, "dt_us": dt, "min_bins": min_bins}),
        inputs: Vec::new(),
    })
}

fn trace_bytes(tr: &EchoTrace) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    tr.write_csv(&mut buf)
        .map_err(|e| CliError::Numerical(format!("echo: {e}")))?;
    Ok(buf)
}

// ---------------------------------------------------------------- fringe

fn phase_noise(n: Option<&NoiseBlock>, seed: u64) -> Result<PhaseNoise, CliError> {
    let Some(n) = n else {
        return Ok(PhaseNoise {
            seed,
            ..PhaseNoise::default()
        });
    };
    let sigma = match (n.sigma, n.target_visibility) {
        (Some(_), Some(_)) => {
            return Err(CliError::Validation(
                "fringe.noise: give either sigma or target_visibility, not both".into(),
            ))
        }
        (Some(s), None) => s,
        (None, Some(v)) => phase_noise_for_visibility(v).ctx("fringe.noise")?,
        (None, None) => 0.0,
    };
    Ok(PhaseNoise {
        sigma,
        shots: n.shots,
        seed,
    })
}

fn scan_artifacts(scan: &FringeScan) -> Artifacts {
    let rows: Vec<Vec<f64>> = scan
        .phases
        .iter()
        .zip(&scan.intensities)
        .map(|(p, i)| vec![*p, *i])
        .collect();
    let mut a = Artifacts::new();
    a.csv("fringe.csv", &["phase", "intensity"], &rows);
    a
}

fn run_fringe(f: &FringeBlock, res: &Resolution, seed: u64) -> Result<RunOutput, CliError> {
    let ln = line(&f.line, "fringe.line")?;
    let noise = phase_noise(f.noise.as_ref(), seed)?;
    let p = "fringe.";
    match f.experiment {
        FringeExperiment::Timebin => {
            let not = "by a timebin fringe";
            unused(f.tau_us.is_some(), &format!("{p}tau_us"), not)?;
            unused(f.depths.is_some(), &format!("{p}depths"), not)?;
            unused(f.atoms.is_some(), &format!("{p}atoms"), not)?;
            unused(f.background.is_some(), &format!("{p}background"), not)?;
            let need = "for a timebin fringe";
            let alpha = required(f.alpha, "fringe.alpha", need)?;
            let beta = required(f.beta, "fringe.beta", need)?;
            let sep = required(f.bin_separation_us, "fringe.bin_separation_us", need)?;
            let fwhm = required(f.fwhm_us, "fringe.fwhm_us", need)?;
            let first = required(f.first_bin_us, "fringe.first_bin_us", need)?;
            let read = required(f.read_time_us, "fringe.read_time_us", need)?;
            let state = TimeBinState::new(
                alpha,
                beta,
                f.phi.unwrap_or(0.0),
                sep,
                WavepacketShape::Gaussian { fwhm },
            )
            .ctx("fringe")?;
            let mut cfg = TimeBinFringeConfig::new(ln, first, read);
            cfg.t2 = f.t2_us;
            cfg.points = f.points;
            cfg.noise = noise;
            cfg.dt = res.dt(f.dt_us.unwrap_or(cfg.dt), "fringe.dt_us")?;
            cfg.min_bins = res.bins(f.min_bins.unwrap_or(cfg.min_bins));
            if let Some([a, b]) = f.read_areas {
                cfg.read_areas = (a, b);
            }
            if let Some([a, b]) = f.read_phases {
                cfg.read_phases = (a, b);
            }
            if let Some(s) = f.scanned {
                cfg.scanned = s;
            }
            if let Some(d) = f.data_area {
                cfg.data_area = d;
            }
            let scan = fringe_scan(&state, &cfg).ctx("fringe")?;
            let summary = json!({
                "visibility": scan.visibility,
                "fidelity": scan.fidelity,
                "fit": to_value(&scan.fit),
                "noise": to_value(&noise),
                "state": to_value(&state),
            });
            Ok(RunOutput {
                summary,
                artifacts: scan_artifacts(&scan),
                grid: json!({"scale": res.scale, "dt_us": cfg.dt, "min_bins": cfg.min_bins}),
                inputs: Vec::new(),
            })
        }
        FringeExperiment::DualMemory => {
            let not = "by a dual_memory fringe";
            for (set, key) in [
                (f.alpha.is_some(), "alpha"),
                (f.beta.is_some(), "beta"),
                (f.phi.is_some(), "phi"),
                (f.bin_separation_us.is_some(), "bin_separation_us"),
                (f.fwhm_us.is_some(), "fwhm_us"),
                (f.first_bin_us.is_some(), "first_bin_us"),
                (f.read_time_us.is_some(), "read_time_us"),
                (f.read_areas.is_some(), "read_areas"),
                (f.read_phases.is_some(), "read_phases"),
                (f.scanned.is_some(), "scanned"),
                (f.data_area.is_some(), "data_area"),
            ] {
                unused(set, &format!("{p}{key}"), not)?;
            }
            let tau = required(f.tau_us, "fringe.tau_us", "for a dual_memory fringe")?;
            let mut cfg = DualMemoryConfig::new(ln, f.t2_us, tau);
            cfg.points = f.points;
            cfg.noise = noise;
            cfg.dt = res.dt(f.dt_us.unwrap_or(cfg.dt), "fringe.dt_us")?;
            cfg.min_bins = res.bins(f.min_bins.unwrap_or(cfg.min_bins));
            if let Some([a, b]) = f.depths {
                cfg.depths = (a, b);
            }
            if let Some(n) = f.atoms {
                cfg.atoms = n;
            }
            if let Some(b) = f.background {
                cfg.background = b;
            }
            let out = dual_memory_fringe(&cfg).ctx("fringe")?;
            let snr = collective_snr(cfg.atoms, tau, f.t2_us).ctx("fringe")?;
            let summary = json!({
                "visibility": out.scan.visibility,
                "fidelity": out.scan.fidelity,
                "expected_visibility": out.expected_visibility,
                "echo_energies": out.echo_energies,
                "echo_energy": out.echo_energies[0] + out.echo_energies[1],
                "collective_snr": to_value(&snr),
                "fit": to_value(&out.scan.fit),
                "noise": to_value(&noise),
                "tau_us": tau,
            });
            Ok(RunOutput {
                summary,
                artifacts: scan_artifacts(&out.scan),
                grid: json!({"scale": res.scale, "dt_us": cfg.dt, "min_bins": cfg.min_bins}),
                inputs: Vec::new(),
            })
        }
    }
}

// ---------------------------------------------------------------- repeater

pub(crate) fn repeater_config(r: &RepeaterBlock) -> Result<RepeaterConfig, CliError> {
    let channel = ChannelSpec {
        attenuation: r.attenuation_db_per_km,
        segment_length: r.segment_length_km,
        total_length: r.total_length_km.unwrap_or(r.segment_length_km),
        speed: r.speed_km_per_s,
    };
    let cfg = RepeaterConfig {
        channel,
        modes: r.modes,
        memory_efficiency: r.memory_efficiency,
        memory_lifetime: r.memory_lifetime_s,
        p_swap: r.p_swap,
        p_pair: r.p_pair,
        p_bsm_mid: r.p_bsm_mid,
        max_rounds: r.max_rounds,
    };
    cfg.validate().ctx("repeater")?;
    Ok(cfg)
}

fn run_repeater(r: &RepeaterBlock, seed: u64) -> Result<RunOutput, CliError> {
    let cfg = repeater_config(r)?;
    if r.trials == 0 {
        return Err(CliError::Validation(
            "repeater.trials: must be at least 1".into(),
        ));
    }
    let ch = &cfg.channel;
    let closed = json!({
        "segments": ch.segments().ctx("repeater")?,
        "segment_transmission": channel_transmission(ch.attenuation, ch.segment_length).ctx("repeater")?,
        "total_transmission": channel_transmission(ch.attenuation, ch.total_length).ctx("repeater")?,
        "min_efficiency": min_efficiency(ch.attenuation, ch.segment_length).ctx("repeater")?,
        "min_storage_time_s": min_storage_time(ch.segment_length, ch.speed).ctx("repeater")?,
        "memory_usefulness": to_value(&memory_usefulness(cfg.memory_efficiency, ch.attenuation, ch.segment_length).ctx("repeater")?),
        "lifetime_rounds": if cfg.lifetime_rounds() == u64::MAX { Value::Null } else { json!(cfg.lifetime_rounds()) },
    });
    let (summary, outcomes) = simulate_repeater(&cfg, r.trials, seed).ctx("repeater")?;
    let hist: Vec<Vec<f64>> = rounds_histogram(&outcomes)
        .into_iter()
        .map(|(k, c)| vec![k as f64, c as f64])
        .collect();
    let mut a = Artifacts::new();
    a.csv("rounds_histogram.csv", &["rounds", "count"], &hist);
    let mut s = to_value(&summary);
    s["bell_chi_squared"] = json!(summary.bell_chi_squared());
    s["closed_form"] = closed;
    s["seed"] = json!(seed);
    Ok(RunOutput {
        summary: s,
        artifacts: a,
        grid: Value::Null,
        inputs: Vec::new(),
    })
}
