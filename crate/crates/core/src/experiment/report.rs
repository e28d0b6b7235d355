//! Report bundles: a JSON summary of named assertions plus CSV data series.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// How an assertion's value is compared with its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    /// `value < tolerance`
    Below,
    /// `value ≤ tolerance`
    AtMost,
    /// `value > tolerance`
    Above,
    /// `value ≥ tolerance`
    AtLeast,
}

impl Comparison {
    pub fn holds(self, value: f64, tolerance: f64) -> bool {
        match self {
            Comparison::Below => value < tolerance,
            Comparison::AtMost => value <= tolerance,
            Comparison::Above => value > tolerance,
            Comparison::AtLeast => value >= tolerance,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparison::Below => "<",
            Comparison::AtMost => "<=",
            Comparison::Above => ">",
            Comparison::AtLeast => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    /// Tag of the result the assertion checks.
    pub anchor: String,
    pub passed: bool,
    pub value: f64,
    pub comparison: Comparison,
    pub tolerance: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Assertion {
    /// A NaN value never passes.
    pub fn new(name: &str, anchor: &str, value: f64, comparison: Comparison, tolerance: f64, seed: u64) -> Self {
        Assertion {
            name: name.to_string(),
            anchor: anchor.to_string(),
            passed: comparison.holds(value, tolerance),
            value,
            comparison,
            tolerance,
            seed,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// One line: `PASS name [anchor] value < tol (seed s)`.
    pub fn line(&self) -> String {
        let mut s = format!(
            "{} {} [{}] {:e} {} {:e} (seed {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.anchor,
            self.value,
            self.comparison.symbol(),
            self.tolerance,
            self.seed
        );
        if let Some(n) = &self.note {
            s.push_str(" -- ");
            s.push_str(n);
        }
        s
    }
}

/// A named CSV body.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub body: String,
}

impl Series {
    /// Serialize `rows` with a header taken from the row type's field names.
    pub fn from_rows<R: Serialize>(name: &str, rows: &[R]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(Series {
            name: name.to_string(),
            body: String::from_utf8(bytes).expect("csv output is utf-8"),
        })
    }
}

/// Everything a suite produced, possibly cut short by its wall-clock budget.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteOutput {
    pub assertions: Vec<Assertion>,
    pub series: Vec<Series>,
    pub truncated: bool,
}

impl SuiteOutput {
    pub fn push(&mut self, a: Assertion) {
        self.assertions.push(a);
    }

    pub fn add_series<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<()> {
        self.series.push(Series::from_rows(name, rows)?);
        Ok(())
    }

    pub fn extend(&mut self, other: SuiteOutput) {
        self.assertions.extend(other.assertions);
        self.series.extend(other.series);
        self.truncated |= other.truncated;
    }

    pub fn series(&self, name: &str) -> Option<&str> {
        self.series.iter().find(|s| s.name == name).map(|s| s.body.as_str())
    }
}

/// Run metadata; the only part of a bundle allowed to vary between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub crate_version: String,
    pub threads: usize,
    pub started_unix_secs: u64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    pub assertions: Vec<Assertion>,
    /// File names of the CSV series, in emission order.
    pub series: Vec<String>,
    pub truncated: bool,
    /// Set when the run stopped on an error; partial results are still reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub metadata: Metadata,
    #[serde(skip)]
    pub bodies: Vec<Series>,
}

impl ReportBundle {
    pub fn from_output(kind: &str, seed: u64, out: SuiteOutput, error: Option<String>, metadata: Metadata) -> Self {
        ReportBundle {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            seed,
            assertions: out.assertions,
            series: out.series.iter().map(|s| format!("{}.csv", s.name)).collect(),
            truncated: out.truncated,
            error,
            metadata,
            bodies: out.series,
        }
    }

    /// True iff the run finished and every assertion holds.
    pub fn all_passed(&self) -> bool {
        self.error.is_none() && self.assertions.iter().all(|a| a.passed)
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle is serializable")
    }

    /// Write `summary.json` and one CSV per series into `dir`; returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let io = |e: std::io::Error| Error::Config(format!("cannot write to {}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut paths = Vec::new();
        for s in &self.bodies {
            let p = dir.join(format!("{}.csv", s.name));
            std::fs::write(&p, &s.body).map_err(io)?;
            paths.push(p);
        }
        let p = dir.join("summary.json");
        std::fs::write(&p, self.summary_json()).map_err(io)?;
        paths.push(p);
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        t: usize,
        value: f64,
    }

    #[test]
    fn comparisons_reject_nan() {
        for c in [Comparison::Below, Comparison::AtMost, Comparison::Above, Comparison::AtLeast] {
            assert!(!c.holds(f64::NAN, 0.0));
        }
        assert!(Comparison::AtMost.holds(1.0, 1.0));
        assert!(!Comparison::Below.holds(1.0, 1.0));
    }

    #[test]
    fn series_has_header_and_rows() {
        let s = Series::from_rows("x", &[Row { t: 0, value: 0.5 }, Row { t: 1, value: 1e-12 }]).unwrap();
        assert_eq!(s.body, "t,value\n0,0.5\n1,1e-12\n");
    }

    #[test]
    fn bundle_round_trips_and_writes_files() {
        let mut out = SuiteOutput::default();
        out.push(Assertion::new("a", "tag", 1e-12, Comparison::Below, 1e-10, 7));
        out.add_series("rows", &[Row { t: 0, value: 1.0 }]).unwrap();
        let meta = Metadata { crate_version: "0".into(), threads: 1, started_unix_secs: 0, elapsed_secs: 0.0 };
        let b = ReportBundle::from_output("invariance", 7, out, None, meta);
        assert!(b.all_passed());
        let back: ReportBundle = serde_json::from_str(&b.summary_json()).unwrap();
        assert_eq!(back.assertions, b.assertions);
        assert_eq!(back.series, vec!["rows.csv".to_string()]);
        let dir = tempfile::tempdir().unwrap();
        let written = b.write(dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(std::fs::read_to_string(dir.path().join("rows.csv")).unwrap(), "t,value\n0,1.0\n");
    }

    #[test]
    fn error_marks_failure() {
        let meta = Metadata { crate_version: "0".into(), threads: 1, started_unix_secs: 0, elapsed_secs: 0.0 };
        let b = ReportBundle::from_output("moments", 1, SuiteOutput::default(), Some("boom".into()), meta);
        assert!(!b.all_passed());
    }
}
