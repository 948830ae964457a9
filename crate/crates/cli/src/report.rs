//! Run reports and their JSON / CSV encodings.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::scenario::Scenario;

pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub phjb: String,
    pub report_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self { phjb: env!("CARGO_PKG_VERSION").to_string(), report_format: REPORT_FORMAT }
    }
}

/// The only nondeterministic part of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_at: String,
    pub elapsed_seconds: f64,
}

/// One inequality or comparison a check evaluated. `None` stands for a
/// non-finite number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub label: String,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub name: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub index: usize,
    pub check: String,
    pub steps: usize,
    pub dt: f64,
    pub passed: bool,
    pub margins: Vec<Margin>,
    pub constants: Vec<Constant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl CheckRecord {
    pub fn new(index: usize, check: &str, steps: usize, dt: f64) -> Self {
        Self {
            index,
            check: check.to_string(),
            steps,
            dt,
            passed: true,
            margins: Vec::new(),
            constants: Vec::new(),
            message: None,
        }
    }

    /// Adds a margin row; the record fails with it.
    pub fn margin(&mut self, label: impl Into<String>, value: f64, bound: f64, passed: bool) {
        self.passed &= passed;
        self.margins.push(Margin { label: label.into(), value: finite(value), bound: finite(bound), passed });
    }

    pub fn constant(&mut self, name: impl Into<String>, value: f64) {
        self.constants.push(Constant { name: name.into(), value: finite(value) });
    }

    pub fn fail(&mut self, message: impl Into<String>) {
        self.passed = false;
        self.message = Some(message.into());
    }

    pub fn note(&mut self, message: impl Into<String>) {
        self.message = Some(message.into());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: Scenario,
    pub records: Vec<CheckRecord>,
    pub passed: bool,
    pub versions: Versions,
    pub wall_clock: WallClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    index: usize,
    check: &'a str,
    steps: usize,
    dt: f64,
    label: &'a str,
    value: Option<f64>,
    bound: Option<f64>,
    passed: bool,
}

impl Report {
    pub fn margin_count(&self) -> usize {
        self.records.iter().map(|r| r.margins.len()).sum()
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Encode(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse { field: "report".into(), message: e.to_string() })
    }

    /// One row per margin record.
    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.margin_count() == 0 {
            w.write_record(["index", "check", "steps", "dt", "label", "value", "bound", "passed"])
                .map_err(|e| CliError::Encode(e.to_string()))?;
        }
        for r in &self.records {
            for m in &r.margins {
                w.serialize(CsvRow {
                    index: r.index,
                    check: &r.check,
                    steps: r.steps,
                    dt: r.dt,
                    label: &m.label,
                    value: m.value,
                    bound: m.bound,
                    passed: m.passed,
                })
                .map_err(|e| CliError::Encode(e.to_string()))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| CliError::Encode(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Encode(e.to_string()))
    }

    pub fn encode(&self, format: Format) -> Result<String, CliError> {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }
}

/// Writes the encoded report to `out`, or to standard output.
pub fn emit_report(report: &Report, format: Format, out: Option<&Path>) -> Result<(), CliError> {
    let text = report.encode(format)?;
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Write { path: path.to_path_buf(), source }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Write { path: PathBuf::from("<stdout>"), source }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let scenario = Scenario::from_json(
            r#"{"space": {"dim": 1, "eigenvalues": ["0"]}, "grid": {"final_time": "1", "step": "0.5"},
                "coefficients": {"name": "eikonal"}, "initial_path": {"time": "0", "point": ["1"]}}"#,
        )
        .unwrap();
        let mut r = CheckRecord::new(0, "value", 2, 0.5);
        r.margin("a", 0.1 + 0.2, 1e-9, true);
        r.margin("b", f64::INFINITY, 1.0, false);
        r.constant("value", std::f64::consts::PI);
        Report {
            scenario,
            records: vec![r],
            passed: false,
            versions: Versions::default(),
            wall_clock: WallClock { started_at: "2026-01-01T00:00:00Z".into(), elapsed_seconds: 0.5 },
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let r = sample();
        let back = Report::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.records[0].margins[0].value.unwrap().to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back.records[0].margins[1].value, None);
    }

    #[test]
    fn csv_has_one_row_per_margin() {
        let r = sample();
        let text = r.to_csv().unwrap();
        assert_eq!(text.lines().count(), 1 + r.margin_count());
        let mut empty = r.clone();
        empty.records.clear();
        assert_eq!(empty.to_csv().unwrap().lines().count(), 1);
    }

    #[test]
    fn write_failure_names_the_path() {
        let err = emit_report(&sample(), Format::Json, Some(Path::new("/nonexistent/dir/r.json"))).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/r.json"));
        assert_eq!(err.exit_code(), 4);
    }
}
