//! CSV report emission: derived views over a results file, with column
//! layout and two-decimal number formatting matching the published table
//! shapes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_records, RunnerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    CorrelationTable,
    FidelityTable,
    RegressionTable,
}

impl ReportKind {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "correlation_table" => Some(ReportKind::CorrelationTable),
            "fidelity_table" => Some(ReportKind::FidelityTable),
            "regression_table" => Some(ReportKind::RegressionTable),
            _ => None,
        }
    }
}

fn payload_str(payload: &serde_json::Value, key: &str) -> Option<String> {
    payload.get(key).and_then(|v| v.as_str()).map(String::from)
}

fn payload_f64(payload: &serde_json::Value, key: &str) -> Option<f64> {
    payload.get(key).and_then(|v| v.as_f64())
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.2}"),
        None => "N/A".to_string(),
    }
}

fn decoder_display(payload: &serde_json::Value) -> String {
    match payload.get("decoder").and_then(|v| v.as_str()) {
        Some("mixture") => "Mix".to_string(),
        Some("contrastive") => "Contrast".to_string(),
        Some(other) => other.to_string(),
        None => "None".to_string(),
    }
}

/// Renders the requested table from a results file. Rows sort by their
/// first column; floats print with two decimals.
pub fn render_report(results: impl AsRef<Path>, kind: ReportKind) -> Result<String, RunnerError> {
    let records = read_records(&results)?;
    let payloads: Vec<serde_json::Value> = records.into_iter().map(|r| r.payload).collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let header: &str = match kind {
        ReportKind::CorrelationTable => {
            for p in &payloads {
                if p.get("kind").and_then(|k| k.as_str()) == Some("correlation") {
                    rows.push(vec![
                        payload_str(p, "trait").unwrap_or_default(),
                        fmt_opt(payload_f64(p, "pearson")),
                        fmt_opt(payload_f64(p, "spearman")),
                        payload_f64(p, "n").map(|n| format!("{}", n as i64)).unwrap_or_default(),
                    ]);
                }
            }
            "trait,pearson,spearman,n"
        }
        ReportKind::FidelityTable => {
            for p in &payloads {
                if p.get("kind").and_then(|k| k.as_str()) == Some("fidelity") {
                    rows.push(vec![
                        payload_str(p, "model").unwrap_or_default(),
                        payload_f64(p, "n_considered")
                            .map(|n| format!("{}", n as i64))
                            .unwrap_or_default(),
                        decoder_display(p),
                        fmt_opt(payload_f64(p, "lambda")),
                        fmt_opt(payload_f64(p, "average_ppx")),
                        fmt_opt(payload_f64(p, "missed_moves")),
                    ]);
                }
            }
            "model,n_considered,decoder,lambda,average_ppx,missed_moves"
        }
        ReportKind::RegressionTable => {
            for p in &payloads {
                if p.get("kind").and_then(|k| k.as_str()) == Some("regression_eval") {
                    rows.push(vec![
                        payload_str(p, "trait").unwrap_or_default(),
                        fmt_opt(payload_f64(p, "lambda_mse")),
                    ]);
                }
            }
            "trait,lambda_mse"
        }
    };
    if rows.is_empty() {
        return Err(RunnerError::EmptyResults(format!(
            "no records for {kind:?} in {}",
            results.as_ref().display()
        )));
    }
    rows.sort();
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Renders and writes the report, returning the CSV path.
pub fn emit_report(
    results: impl AsRef<Path>,
    kind: ReportKind,
    out: impl AsRef<Path>,
) -> Result<std::path::PathBuf, RunnerError> {
    let csv = render_report(results, kind)?;
    let out = out.as_ref();
    std::fs::write(out, csv).map_err(|e| RunnerError::Io(format!("{}: {e}", out.display())))?;
    Ok(out.to_path_buf())
}
