//! One-axis parameter sweeps over a base scenario.

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::output::{sha256_hex, Artifacts};
use crate::run::{execute, RunOptions, RunOutput};
use crate::scenario::{self, Kind, LoadedScenario};
use crate::CliError;

/// Sets the numeric key at `path` (dotted) in `table`, creating missing
/// tables on the way (the typed parse afterwards rejects unknown keys). An
/// existing leaf must already be a number.
pub fn set_number(table: &mut toml::Table, path: &str, value: f64) -> Result<(), CliError> {
    let bad = |why: String| CliError::Validation(format!("sweep.parameter: {why}"));
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad(format!("`{path}` is not a dotted key path")));
    }
    let (leaf, parents) = parts.split_last().expect("split yields one part");
    let mut t = table;
    for (i, p) in parents.iter().enumerate() {
        t = match t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        {
            toml::Value::Table(inner) => inner,
            _ => return Err(bad(format!("`{}` is not a table", parts[..=i].join(".")))),
        };
    }
    if !value.is_finite() {
        return Err(bad(format!("sweep value {value} is not finite")));
    }
    let integral = value.fract() == 0.0 && value.abs() < 9e15;
    let new = match t.get(*leaf) {
        Some(toml::Value::Integer(_)) if integral => toml::Value::Integer(value as i64),
        Some(toml::Value::Integer(_)) | Some(toml::Value::Float(_)) | None => {
            toml::Value::Float(value)
        }
        Some(other) => {
            return Err(bad(format!(
                "`{path}` is a {} and cannot be swept",
                other.type_str()
            )));
        }
    };
    t.insert(leaf.to_string(), new);
    Ok(())
}

fn default_columns(kind: Kind) -> Vec<String> {
    let cols: &[&str] = match kind {
        Kind::Crib => &["efficiency", "efficiency_formula", "abs_diff"],
        Kind::Echo => &["peak_time_us", "echo_intensity"],
        Kind::Timebin => &["fidelity", "efficiency"],
        Kind::Fringe => &["visibility", "fidelity"],
        Kind::Repeater => &[
            "mean_rounds",
            "mean_time",
            "p_segment",
            "closed_form.min_efficiency",
        ],
        Kind::Sweep => &[],
    };
    cols.iter().map(|s| s.to_string()).collect()
}

fn lookup(v: &Value, path: &str) -> Option<f64> {
    let mut cur = v;
    for p in path.split('.') {
        cur = match cur {
            Value::Object(o) => o.get(p)?,
            Value::Array(a) => a.get(p.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    match cur {
        Value::Number(n) => n.as_f64(),
        Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        Value::Null => Some(f64::NAN),
        _ => None,
    }
}

pub fn point_dir(i: usize) -> String {
    format!("point_{i:03}")
}

pub fn run_sweep(loaded: &LoadedScenario, opts: &RunOptions) -> Result<RunOutput, CliError> {
    let sw = loaded.scenario.sweep.as_ref().expect("checked at load");
    let base_path = loaded
        .path
        .parent()
        .unwrap_or(std::path::Path::new("."))
        .join(&sw.base);
    let base = scenario::load(&base_path)?;
    if base.scenario.kind == Kind::Sweep {
        return Err(CliError::Validation(
            "sweep.base: a sweep cannot sweep another sweep".into(),
        ));
    }
    if sw.values.is_empty() {
        return Err(CliError::Validation(
            "sweep.values: need at least one value".into(),
        ));
    }
    if sw.parameter == "kind" || sw.parameter == "name" || sw.parameter == "seed" {
        return Err(CliError::Validation(format!(
            "sweep.parameter: `{}` cannot be swept",
            sw.parameter
        )));
    }
    let columns = sw
        .columns
        .clone()
        .unwrap_or_else(|| default_columns(base.scenario.kind));
    if columns.is_empty() {
        return Err(CliError::Validation(
            "sweep.columns: need at least one column".into(),
        ));
    }
    // Build and validate every point before running any of them.
    let points: Vec<LoadedScenario> = sw
        .values
        .iter()
        .map(|&v| {
            let mut raw = base.raw.clone();
            set_number(&mut raw, &sw.parameter, v)?;
            let origin = format!("{} with {} = {v}", base_path.display(), sw.parameter);
            Ok(LoadedScenario {
                path: base.path.clone(),
                bytes: base.bytes.clone(),
                scenario: scenario::from_table(raw.clone(), &origin)?,
                raw,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let results: Vec<Result<RunOutput, CliError>> =
        points.par_iter().map(|p| execute(p, opts)).collect();
    let mut outputs = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        outputs.push(r.map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("sweep point {i}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("sweep point {i}: {m}")),
            other => other,
        })?);
    }

    let mut header = vec![sw.parameter.as_str()];
    header.extend(columns.iter().map(String::as_str));
    let mut rows = Vec::new();
    let mut artifacts = Artifacts::new();
    let mut point_summaries = Vec::new();
    for (i, (v, out)) in sw.values.iter().zip(outputs).enumerate() {
        let mut row = vec![*v];
        for c in &columns {
            let x = lookup(&out.summary, c).ok_or_else(|| {
                CliError::Validation(format!(
                    "sweep.columns: `{c}` is not a number in the point summary"
                ))
            })?;
            row.push(x);
        }
        rows.push(row);
        let mut a = out.artifacts;
        a.json("summary.json", &out.summary);
        artifacts.nest(&point_dir(i), a);
        point_summaries.push(json!({"value": v, "dir": point_dir(i), "grid": out.grid}));
    }
    artifacts.csv("sweep.csv", &header, &rows);
    let summary = json!({
        "parameter": sw.parameter,
        "base_kind": base.scenario.kind.name(),
        "columns": columns,
        "points": point_summaries,
    });
    Ok(RunOutput {
        summary,
        artifacts,
        grid: json!({"per_point": true}),
        inputs: vec![(base_path.display().to_string(), sha256_hex(&base.bytes))],
    })
}
