//! `uddl-report v1`: plain-text, tab-separated trial results.
//!
//! ```text
//! uddl-report v1
//! # key = value            (config echo)
//! method<TAB>trial<TAB>accuracy
//! method<TAB>mean<TAB>std
//! ```
//! Floats use Rust's shortest round-trip formatting. Runtime is printed but not
//! written, so reports of identical runs are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{format_err, CliResult};

pub const REPORT_HEADER: &str = "uddl-report v1";

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: String,
    pub accuracies: Vec<f64>,
}

impl MethodResult {
    pub fn mean(&self) -> f64 {
        if self.accuracies.is_empty() {
            return f64::NAN;
        }
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    /// Sample standard deviation; 0 for a single trial.
    pub fn std(&self) -> f64 {
        let n = self.accuracies.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.accuracies.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialReport {
    pub config: Vec<(String, String)>,
    pub methods: Vec<MethodResult>,
    pub runtime_seconds: f64,
}

impl TrialReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for (k, v) in &self.config {
            let _ = writeln!(out, "# {k} = {v}");
        }
        for m in &self.methods {
            for (t, a) in m.accuracies.iter().enumerate() {
                let _ = writeln!(out, "{}\t{t}\t{a:?}", m.method);
            }
        }
        for m in &self.methods {
            let _ = writeln!(out, "{}\tmean\t{:?}", m.method, m.mean());
            let _ = writeln!(out, "{}\tstd\t{:?}", m.method, m.std());
        }
        out
    }

    /// Human-readable summary for stdout.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{:<12} mean {:.4}  std {:.4}  ({} trials)",
                m.method,
                m.mean(),
                m.std(),
                m.accuracies.len()
            );
        }
        let _ = writeln!(out, "runtime {:.2} s", self.runtime_seconds);
        out
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parses a report. Summary rows are checked against the trial rows.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(format_err(format!(
                "report must start with {REPORT_HEADER:?}"
            )));
        }
        let mut report = TrialReport::default();
        let mut summaries: Vec<(String, &str, f64)> = Vec::new();
        for line in lines {
            if let Some(echo) = line.strip_prefix("# ") {
                let (k, v) = echo
                    .split_once(" = ")
                    .ok_or_else(|| format_err(format!("malformed config echo {line:?}")))?;
                report.config.push((k.to_string(), v.to_string()));
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [method, key, value] = fields[..] else {
                return Err(format_err(format!("malformed report row {line:?}")));
            };
            let value: f64 = value
                .parse()
                .map_err(|_| format_err(format!("bad number in row {line:?}")))?;
            match key {
                "mean" | "std" => summaries.push((
                    method.to_string(),
                    if key == "mean" { "mean" } else { "std" },
                    value,
                )),
                trial => {
                    let trial: usize = trial
                        .parse()
                        .map_err(|_| format_err(format!("bad trial index in row {line:?}")))?;
                    let idx = match report.methods.iter().position(|m| m.method == method) {
                        Some(i) => i,
                        None => {
                            report.methods.push(MethodResult {
                                method: method.to_string(),
                                accuracies: Vec::new(),
                            });
                            report.methods.len() - 1
                        }
                    };
                    let m = &mut report.methods[idx];
                    if trial != m.accuracies.len() {
                        return Err(format_err(format!(
                            "trial rows of {method} out of order at {trial}"
                        )));
                    }
                    m.accuracies.push(value);
                }
            }
        }
        for (method, key, value) in summaries {
            let m = report
                .method(&method)
                .ok_or_else(|| format_err(format!("summary for unknown method {method}")))?;
            let expected = if key == "mean" { m.mean() } else { m.std() };
            if expected.to_bits() != value.to_bits() {
                return Err(format_err(format!(
                    "{method} {key} {value:?} disagrees with trials ({expected:?})"
                )));
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrialReport {
        TrialReport {
            config: vec![("trials".into(), "3".into())],
            methods: vec![
                MethodResult {
                    method: "adapted".into(),
                    accuracies: vec![0.5, 0.75, 1.0],
                },
                MethodResult {
                    method: "bow".into(),
                    accuracies: vec![0.1, 0.2, 0.3],
                },
            ],
            runtime_seconds: 1.5,
        }
    }

    #[test]
    fn text_round_trips() {
        let r = sample();
        let text = r.to_text();
        assert!(text.starts_with("uddl-report v1\n# trials = 3\nadapted\t0\t0.5\n"));
        assert!(!text.contains("runtime"));
        let back = TrialReport::parse(&text).unwrap();
        assert_eq!(back.methods, r.methods);
        assert_eq!(back.config, r.config);
    }

    #[test]
    fn sample_std() {
        let r = sample();
        assert_eq!(r.methods[0].mean(), 0.75);
        assert!((r.methods[0].std() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_tampered_mean() {
        let text = sample()
            .to_text()
            .replace("adapted\tmean\t0.75", "adapted\tmean\t0.8");
        assert!(TrialReport::parse(&text).is_err());
    }
}
