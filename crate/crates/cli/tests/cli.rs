use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn crib(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crib"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run(scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "--scenario",
        scenario.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--quiet",
    ];
    args.extend_from_slice(extra);
    crib(&args)
}

const FORWARD: &str = r#"
name = "forward"
kind = "crib"
[crib]
broadening_mhz = 1.0
depth = 2.0
recall = "forward"
recall_window = 2.0
line = { kind = "lorentzian", width_mhz = 1e-9 }
[crib.input]
shape = "gaussian"
fwhm_us = 3.0
record_us = 15.0
"#;

const BACKWARD_SHORT: &str = r#"
name = "backward"
kind = "crib"
[crib]
broadening_mhz = 1.0
depth = 1.0
recall = "backward"
line = { kind = "lorentzian", width_mhz = 1e-9 }
[crib.input]
shape = "gaussian"
fwhm_us = 3.0
record_us = 15.0
"#;

const REPEATER: &str = r#"
name = "link"
kind = "repeater"
seed = 5
[repeater]
attenuation_db_per_km = 0.2
segment_length_km = 50.0
total_length_km = 100.0
modes = 4
memory_efficiency = 0.9
trials = 2000
"#;

#[test]
fn forward_crib_at_depth_two_reaches_the_ceiling() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "fwd.toml", FORWARD);
    let out = dir.path().join("out");
    let o = run(&sc, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    let eff = s["efficiency"].as_f64().unwrap();
    assert!((eff - 0.541).abs() < 0.011, "efficiency {eff}");
    for f in [
        "input.csv",
        "transmitted.csv",
        "recalled.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(out.join("recalled.csv")).unwrap();
    assert!(csv.starts_with("t,re,im,intensity\n"));
    assert!(!csv.contains('\r'));
}

#[test]
fn manifest_records_inputs_grid_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "b.toml", BACKWARD_SHORT);
    let out = dir.path().join("out");
    assert!(run(&sc, &out, &["--grid-scale", "2"]).status.success());
    let m = json(&out.join("manifest.json"));
    let digest = hex::encode(Sha256::digest(BACKWARD_SHORT.as_bytes()));
    assert_eq!(m["scenario"]["sha256"], digest.as_str());
    assert_eq!(m["scenario"]["kind"], "crib");
    assert_eq!(m["grid"]["n_bins"], 800);
    assert_eq!(m["grid"]["dt_us"], 0.025);
    assert!(m["versions"]["crib-core"].is_string());
    let files: Vec<&str> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    assert_eq!(
        files,
        [
            "input.csv",
            "recalled.csv",
            "summary.json",
            "transmitted.csv"
        ]
    );
    let summary = fs::read(out.join("summary.json")).unwrap();
    assert_eq!(
        m["files"][2]["sha256"],
        hex::encode(Sha256::digest(&summary)).as_str()
    );
}

#[test]
fn same_seed_gives_identical_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "r.toml", REPEATER);
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    assert!(run(&sc, &a, &[]).status.success());
    assert!(run(&sc, &b, &[]).status.success());
    assert!(run(&sc, &c, &["--seed", "6"]).status.success());
    let read = |d: &Path| fs::read(d.join("summary.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(json(&c.join("manifest.json"))["seed"], 6);
}

#[test]
fn summary_numbers_have_at_most_twelve_digits() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "r.toml", REPEATER);
    let out = dir.path().join("out");
    assert!(run(&sc, &out, &[]).status.success());
    let text = fs::read_to_string(out.join("summary.json")).unwrap();
    for tok in text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == '-')) {
        let mantissa = tok.split('e').next().unwrap();
        let digits = mantissa
            .chars()
            .filter(char::is_ascii_digit)
            .collect::<String>();
        assert!(digits.trim_start_matches('0').len() <= 12, "{tok}");
    }
}

#[test]
fn unknown_key_is_rejected_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(
        dir.path(),
        "bad.toml",
        &FORWARD.replace("width_mhz = 1e-9", "width_mhz = 1e-9, wdth = 2"),
    );
    let out = dir.path().join("out");
    let o = run(&sc, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("crib.line.wdth"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn violated_precondition_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(
        dir.path(),
        "neg.toml",
        &FORWARD.replace("depth = 2.0", "depth = -1.0"),
    );
    let out = dir.path().join("out");
    let o = run(&sc, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("crib.depth"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn missing_block_and_stray_block_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let sc = write(dir.path(), "a.toml", "name = \"x\"\nkind = \"echo\"\n");
    let o = run(&sc, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("echo"));
    let sc = write(dir.path(), "b.toml", &format!("{REPEATER}\n[echo]\nexperiment = \"two_pulse\"\nline = {{ kind = \"gaussian\", width_mhz = 1.0 }}\n"));
    assert_eq!(run(&sc, &out, &[]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_three_and_leaves_nothing() {
    // A 50 ns pulse against a 1 MHz line on a coarse, narrow grid.
    let body = r#"
name = "leak"
kind = "crib"
[grid]
n_bins = 64
cutoff = 3.0
nz = 20
[crib]
broadening_mhz = 0.0
depth = 100.0
recall = "backward"
line = { kind = "gaussian", width_mhz = 1.0 }
[crib.input]
shape = "gaussian"
fwhm_us = 0.05
record_us = 2.0
dt_us = 0.005
"#;
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "leak.toml", body);
    let out = dir.path().join("out");
    let o = run(&sc, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("leakage"));
    let left: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(left.len(), 1, "{left:?}");
}

#[test]
fn existing_foreign_directory_is_not_replaced() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "r.toml", REPEATER);
    let out = dir.path().join("mine");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("notes.txt"), "keep").unwrap();
    assert_eq!(run(&sc, &out, &[]).status.code(), Some(2));
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "keep");
}

#[test]
fn depth_sweep_tabulates_simulation_against_formula() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "base.toml", BACKWARD_SHORT);
    let sc = write(
        dir.path(),
        "sweep.toml",
        "name = \"s\"\nkind = \"sweep\"\n[sweep]\nbase = \"base.toml\"\nparameter = \"crib.depth\"\nvalues = [0.5, 1, 2, 4]\n",
    );
    let out = dir.path().join("out");
    let o = run(&sc, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "crib.depth,efficiency,efficiency_formula,abs_diff"
    );
    assert_eq!(lines.len(), 5);
    for (line, depth) in lines[1..].iter().zip([0.5, 1.0, 2.0, 4.0]) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[0], depth);
        let formula = (1.0 - (-depth).exp()).powi(2);
        assert!((v[2] - formula).abs() < 5e-12 * formula);
        assert!(v[3] < 0.02);
    }
    for i in 0..4 {
        assert!(out.join(format!("point_{i:03}/summary.json")).is_file());
    }
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["additional_inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn sweep_over_non_numeric_key_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "base.toml", BACKWARD_SHORT);
    let sc = write(
        dir.path(),
        "sweep.toml",
        "name = \"s\"\nkind = \"sweep\"\n[sweep]\nbase = \"base.toml\"\nparameter = \"crib.recall\"\nvalues = [1]\n",
    );
    let o = run(&sc, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("crib.recall"));
}

#[test]
fn segment_length_sweep_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "base.toml",
        &REPEATER.replace("total_length_km = 100.0\n", ""),
    );
    let sc = write(
        dir.path(),
        "sweep.toml",
        "name = \"s\"\nkind = \"sweep\"\n[sweep]\nbase = \"base.toml\"\nparameter = \"repeater.segment_length_km\"\nvalues = [20, 40, 80]\ncolumns = [\"closed_form.min_efficiency\"]\n",
    );
    let out = dir.path().join("out");
    assert!(run(&sc, &out, &[]).status.success());
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let exact = 10f64.powf(-0.2 * v[0] / 20.0);
        // Twelve significant digits in the CSV.
        assert!((v[1] - exact).abs() <= 5e-12 * exact, "{line}");
    }
}

#[test]
fn echo_scenario_finds_the_echo() {
    let body = r#"
name = "echo"
kind = "echo"
[echo]
experiment = "two_pulse"
line = { kind = "gaussian", width_mhz = 2.0 }
tau_us = 1.2
"#;
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "e.toml", body);
    let out = dir.path().join("out");
    assert!(run(&sc, &out, &[]).status.success());
    let s = json(&out.join("summary.json"));
    assert!((s["peak_time_us"].as_f64().unwrap() - 2.4).abs() <= 0.01 + 1e-9);
}

#[test]
fn timebin_scenario_swaps_bins() {
    let body = r#"
name = "tb"
kind = "timebin"
[timebin]
alpha = 0.6
beta = 0.8
phi = 2.0
bin_separation_us = 2.0
fwhm_us = 0.5
carrier_mhz = 0.7
dt_us = 0.02
[crib]
broadening_mhz = 4.0
depth = 4.0
recall = "backward"
recall_window = 2.0
line = { kind = "lorentzian", width_mhz = 1e-9 }
"#;
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "t.toml", body);
    let out = dir.path().join("out");
    let o = run(&sc, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert!(s["fidelity"].as_f64().unwrap() > 0.999);
    assert!((s["analysis"]["raw_alpha"].as_f64().unwrap() - 0.8).abs() < 1e-3);
}

#[test]
fn malformed_toml_and_bad_flags_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "x.toml", "name = \n");
    assert_eq!(run(&sc, &dir.path().join("o"), &[]).status.code(), Some(2));
    assert_eq!(
        run(&sc, &dir.path().join("o"), &["--grid-scale", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(crib(&["--bogus"]).status.code(), Some(2));
    assert_eq!(crib(&[]).status.code(), Some(2));
    assert!(crib(&["--help"]).status.success());
}
