//! Artifact assembly and atomic directory commits.
//!
//! JSON objects have sorted keys and every number is rounded to 12
//! significant digits, so identical runs give byte-identical files.
//! Non-finite numbers become `null`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crib_core::waveform::{fmt_sig, Waveform};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Rounds every float in `v` to 12 significant digits.
pub fn normalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .map(round_sig)
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(normalize).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, normalize(v))).collect()),
        other => other,
    }
}

pub fn to_value<T: Serialize>(t: &T) -> Value {
    normalize(serde_json::to_value(t).expect("plain data serializes"))
}

pub fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(&normalize(v.clone())).expect("JSON value serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn csv_bytes(header: &[&str], rows: &[Vec<f64>]) -> Vec<u8> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt_sig(x)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s.into_bytes()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files of one run, keyed by path relative to the output directory.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(path.into(), bytes);
    }

    pub fn json(&mut self, path: &str, v: &Value) {
        self.add(path, json_bytes(v));
    }

    pub fn csv(&mut self, path: &str, header: &[&str], rows: &[Vec<f64>]) {
        self.add(path, csv_bytes(header, rows));
    }

    pub fn waveform(&mut self, path: &str, w: &Waveform) {
        let mut buf = Vec::new();
        w.write_csv(&mut buf).expect("writing to memory");
        self.add(path, buf);
    }

    /// Moves `other` under `prefix/`.
    pub fn nest(&mut self, prefix: &str, other: Artifacts) {
        for (k, v) in other.files {
            self.files.insert(format!("{prefix}/{k}"), v);
        }
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files.get(path).map(Vec::as_slice)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    /// Path, size and digest of every file, for the manifest.
    pub fn listing(&self) -> Value {
        Value::Array(
            self.files
                .iter()
                .map(|(k, v)| json!({"path": k, "bytes": v.len(), "sha256": sha256_hex(v)}))
                .collect(),
        )
    }
}

/// Writes `artifacts` plus `manifest` (with the file listing added) into a
/// staging directory next to `out_dir`, then renames it into place. Nothing
/// is left behind on failure. An existing `out_dir` is replaced only if it
/// holds a manifest from an earlier run.
pub fn commit(out_dir: &Path, artifacts: &Artifacts, manifest: Value) -> Result<(), CliError> {
    if out_dir.exists() {
        let empty = fs::read_dir(out_dir)
            .map(|mut d| d.next().is_none())
            .unwrap_or(false);
        if !empty && !out_dir.join(MANIFEST).is_file() {
            return Err(CliError::Validation(format!(
                "out_dir: {} exists and was not written by this tool; refusing to replace it",
                out_dir.display()
            )));
        }
    }
    let staging = staging_path(out_dir);
    let result = write_all(&staging, artifacts, manifest).and_then(|_| {
        if out_dir.exists() {
            fs::remove_dir_all(out_dir)?;
        }
        fs::rename(&staging, out_dir)
    });
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&staging);
        return Err(CliError::Io(format!("writing {}: {e}", out_dir.display())));
    }
    Ok(())
}

fn staging_path(out_dir: &Path) -> PathBuf {
    let name = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    out_dir.with_file_name(format!(".{name}.partial-{}", std::process::id()))
}

fn write_all(staging: &Path, artifacts: &Artifacts, manifest: Value) -> std::io::Result<()> {
    if staging.exists() {
        fs::remove_dir_all(staging)?;
    }
    fs::create_dir_all(staging)?;
    for (rel, bytes) in &artifacts.files {
        let path = staging.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
    }
    let mut manifest = match manifest {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("run".into(), other);
            m
        }
    };
    manifest.insert("files".into(), artifacts.listing());
    fs::write(staging.join(MANIFEST), json_bytes(&Value::Object(manifest)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_to_twelve_digits() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_sig(-2.5e-30), -2.5e-30);
    }

    #[test]
    fn keys_sorted_and_nonfinite_null() {
        let v = json!({"b": 1.0 / 3.0, "a": [f64::NAN], "c": {"z": 1, "y": 2}});
        let s = String::from_utf8(json_bytes(&v)).unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.contains("0.333333333333,") || s.contains("0.333333333333\n"));
        assert!(!s.contains("3333333333333"));
        let inf = to_value(&f64::INFINITY);
        assert_eq!(inf, Value::Null);
    }

    #[test]
    fn commit_refuses_foreign_directory() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        fs::create_dir(&out).unwrap();
        fs::write(out.join("keep.txt"), "mine").unwrap();
        let mut a = Artifacts::new();
        a.add("x.txt", b"1".to_vec());
        assert!(commit(&out, &a, json!({})).is_err());
        assert!(out.join("keep.txt").exists());
    }

    #[test]
    fn commit_replaces_previous_run() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut a = Artifacts::new();
        a.add("old.txt", b"1".to_vec());
        commit(&out, &a, json!({})).unwrap();
        let mut b = Artifacts::new();
        b.add("sub/new.txt", b"2".to_vec());
        commit(&out, &b, json!({"name": "x"})).unwrap();
        assert!(!out.join("old.txt").exists());
        assert!(out.join("sub/new.txt").exists());
        let m: Value = serde_json::from_slice(&fs::read(out.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(m["files"][0]["path"], "sub/new.txt");
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
