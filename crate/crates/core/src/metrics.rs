//! Per-checkpoint training metrics and their CSV encoding.

use std::fmt::Write as _;

use crate::error::{PolkError, Result};

/// Column names, in order. `elapsed_s` is appended only when timing is on.
pub const METRICS_COLUMNS: [&str; 14] = [
    "t",
    "samples_seen",
    "eta",
    "epsilon",
    "model_order",
    "empirical_risk",
    "test_error_pct",
    "bias",
    "bias_bound",
    "iterate_norm",
    "norm_bound",
    "trailing_risk",
    "trailing_error_pct",
    "trailing_model_order",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// Completed steps.
    pub t: usize,
    pub samples_seen: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub model_order: usize,
    /// Regularized risk on the evaluation set (NaN without one).
    pub empirical_risk: f64,
    pub test_error_pct: f64,
    pub bias: f64,
    pub bias_bound: f64,
    pub iterate_norm: f64,
    pub norm_bound: f64,
    /// Running means over checkpoints in the final 5% of the stream; NaN before it.
    pub trailing_risk: f64,
    pub trailing_error_pct: f64,
    pub trailing_model_order: f64,
    pub elapsed_s: Option<f64>,
}

pub fn metrics_header(timing: bool) -> String {
    let mut h = METRICS_COLUMNS.join(",");
    if timing {
        h.push_str(",elapsed_s");
    }
    h
}

pub fn metrics_csv(records: &[MetricsRecord], timing: bool) -> String {
    let mut out = metrics_header(timing);
    out.push('\n');
    for r in records {
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.samples_seen,
            r.eta,
            r.epsilon,
            r.model_order,
            r.empirical_risk,
            r.test_error_pct,
            r.bias,
            r.bias_bound,
            r.iterate_norm,
            r.norm_bound,
            r.trailing_risk,
            r.trailing_error_pct,
            r.trailing_model_order
        )
        .unwrap();
        if timing {
            write!(out, ",{}", r.elapsed_s.unwrap_or(f64::NAN)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parse a metrics CSV written by [`metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let path = std::path::Path::new("<metrics>");
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| PolkError::parse(path, 1, "empty metrics file"))?;
    let timing = if header == metrics_header(false) {
        false
    } else if header == metrics_header(true) {
        true
    } else {
        return Err(PolkError::parse(path, 1, format!("unexpected header '{header}'")));
    };
    let width = METRICS_COLUMNS.len() + timing as usize;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != width {
            return Err(PolkError::parse(path, n, format!("{} fields, expected {width}", f.len())));
        }
        let int = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| PolkError::parse(path, n, format!("'{s}' is not an integer")))
        };
        let real = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| PolkError::parse(path, n, format!("'{s}' is not a number")))
        };
        out.push(MetricsRecord {
            t: int(f[0])?,
            samples_seen: int(f[1])?,
            eta: real(f[2])?,
            epsilon: real(f[3])?,
            model_order: int(f[4])?,
            empirical_risk: real(f[5])?,
            test_error_pct: real(f[6])?,
            bias: real(f[7])?,
            bias_bound: real(f[8])?,
            iterate_norm: real(f[9])?,
            norm_bound: real(f[10])?,
            trailing_risk: real(f[11])?,
            trailing_error_pct: real(f[12])?,
            trailing_model_order: real(f[13])?,
            elapsed_s: if timing { Some(real(f[14])?) } else { None },
        });
    }
    Ok(out)
}
