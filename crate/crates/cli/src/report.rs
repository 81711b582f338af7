//! Run reports: JSON document plus labeled numeric series.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Labeled numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn with_columns(name: &str, columns: Vec<String>) -> Self {
        Self { name: name.into(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn inline(&self) -> Value {
        json!({ "columns": self.columns, "rows": self.rows.iter().map(|r| r.iter().map(|x| num(*x)).collect::<Vec<_>>()).collect::<Vec<_>>() })
    }

    /// CSV with a header row; floats use the shortest round-trip form.
    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(io_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|x| x.to_string())).map_err(io_err)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// JSON number, or the strings `"NaN"`, `"inf"`, `"-inf"`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(x.to_string())
    }
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| num(*x)).collect())
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub tolerances: BTreeMap<String, f64>,
    pub result: Value,
    pub series: Vec<Series>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the command, its arguments and the parsed config document.
pub fn config_hash(command: &str, args: &Value, document: Option<&Value>) -> String {
    let canon = json!({ "command": command, "args": args, "config": document.cloned().unwrap_or(Value::Null) });
    sha256_hex(canon.to_string().as_bytes())
}

impl RunReport {
    /// Hash over everything except the provenance block.
    pub fn output_hash(&self) -> String {
        let body = json!({
            "command": self.command,
            "tolerances": self.tolerances,
            "result": self.result,
            "series": self.series.iter().map(|s| (s.name.clone(), s.inline())).collect::<Map<_, _>>(),
        });
        sha256_hex(body.to_string().as_bytes())
    }

    fn document(&self, inline_series: bool) -> Value {
        let series: Map<String, Value> = self
            .series
            .iter()
            .map(|s| {
                let v = if inline_series { s.inline() } else { Value::String(format!("{}.csv", s.name)) };
                (s.name.clone(), v)
            })
            .collect();
        let mut prov = json!({
            "config_hash": self.config_hash,
            "output_hash": self.output_hash(),
            "version": env!("CARGO_PKG_VERSION"),
            "timestamp": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        });
        if let Some(s) = self.seed {
            prov["seed"] = json!(s);
        }
        json!({
            "command": self.command,
            "provenance": prov,
            "tolerances": self.tolerances,
            "result": self.result,
            "series": series,
        })
    }

    pub fn to_stdout(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.document(true)).map_err(io_err)?;
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        match writeln!(lock, "{text}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => r.map_err(io_err),
        }
    }

    /// Writes `report.json` and one CSV per series. Every file goes to a
    /// temporary name first and is renamed once all writes succeeded.
    pub fn to_dir(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        for s in &self.series {
            files.push((format!("{}.csv", s.name), s.to_csv()?));
        }
        let text = serde_json::to_string_pretty(&self.document(false)).map_err(io_err)?;
        files.push(("report.json".into(), format!("{text}\n").into_bytes()));
        let mut staged = Vec::new();
        for (name, bytes) in &files {
            let tmp = dir.join(format!(".{name}.tmp"));
            if let Err(e) = fs::write(&tmp, bytes) {
                for t in &staged {
                    let _ = fs::remove_file(t);
                }
                return Err(CliError::Io(format!("{}: {e}", tmp.display())));
            }
            staged.push(tmp);
        }
        for (tmp, (name, _)) in staged.iter().zip(&files) {
            fs::rename(tmp, dir.join(name)).map_err(io_err)?;
        }
        Ok(())
    }
}
