//! Confusion-matrix metrics with the vulnerable class (label 1) as positive,
//! and report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("unknown report format {0:?} (expected json, csv or md)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: u8,
    pub pred: u8,
    pub p_vulnerable: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub split: String,
    pub model: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<PredictionRecord>,
}

impl MetricsReport {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn with_names(mut self, dataset: &str, split: &str, model: &str) -> Self {
        self.dataset = dataset.to_string();
        self.split = split.to_string();
        self.model = model.to_string();
        self
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Counts and rates; any 0/0 is reported as 0.
pub fn compute_metrics(preds: &[u8], labels: &[u8]) -> Result<MetricsReport, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            (0, 0) => tn += 1,
            (p, y) => return Err(EvalError::BadLabel(if p > 1 { p } else { y })),
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(MetricsReport {
        dataset: String::new(),
        split: String::new(),
        model: String::new(),
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1: f1_score(precision, recall),
        predictions: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Csv => "csv",
            Self::Md => "md",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Md),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

pub const CSV_HEADER: &str = "dataset,split,model,recall,precision,f1";

/// Renders reports in a fixed field order. JSON holds the counts and rates
/// (per-sample predictions go to [`predictions_jsonl`]); CSV and markdown
/// hold one row per report.
pub fn emit_report(reports: &[MetricsReport], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Json => {
            let rows: Vec<MetricsReport> = reports
                .iter()
                .map(|r| MetricsReport {
                    predictions: Vec::new(),
                    ..r.clone()
                })
                .collect();
            let value = if rows.len() == 1 {
                serde_json::to_string_pretty(&rows[0])
            } else {
                serde_json::to_string_pretty(&rows)
            };
            out.push_str(&value.expect("report serializes"));
            out.push('\n');
        }
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in reports {
                writeln!(out, "{},{},{},{},{},{}", r.dataset, r.split, r.model, r.recall, r.precision, r.f1)
                    .expect("write to string");
            }
        }
        ReportFormat::Md => {
            out.push_str("| Dataset | Split | Model | Recall | Precision | F1-measure |\n");
            out.push_str("|---|---|---|---:|---:|---:|\n");
            for r in reports {
                writeln!(
                    out,
                    "| {} | {} | {} | {:.2} | {:.2} | {:.2} |",
                    r.dataset,
                    r.split,
                    r.model,
                    100.0 * r.recall,
                    100.0 * r.precision,
                    100.0 * r.f1
                )
                .expect("write to string");
            }
        }
    }
    out
}

/// One JSON object per line: `{"id","label","pred","p_vulnerable"}`.
pub fn predictions_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn direct_formula() {
        let preds = [1, 1, 1, 1, 0, 0, 0];
        let labels = [1, 1, 1, 0, 1, 1, 0];
        let r = compute_metrics(&preds, &labels).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (3, 1, 2, 1));
        assert!(close(r.precision, 0.75) && close(r.recall, 0.6));
        assert!(close(r.f1, 2.0 * 0.45 / 1.35));
    }

    #[test]
    fn degenerate_is_zero() {
        let r = compute_metrics(&[0, 0], &[0, 0]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn errors() {
        assert_eq!(
            compute_metrics(&[1], &[1, 0]),
            Err(EvalError::LengthMismatch { preds: 1, labels: 2 })
        );
        assert_eq!(compute_metrics(&[], &[]), Err(EvalError::Empty));
        assert_eq!(compute_metrics(&[2], &[1]), Err(EvalError::BadLabel(2)));
    }

    #[test]
    fn published_harmonic_mean() {
        let f1 = f1_score(0.5647, 0.8135);
        assert!((100.0 * f1 - 66.67).abs() <= 0.01, "{f1}");
    }

    #[test]
    fn renderings() {
        let r = compute_metrics(&[1, 0, 1], &[1, 1, 0]).unwrap().with_names("synth", "test", "student");
        let json: serde_json::Value = serde_json::from_str(&emit_report(std::slice::from_ref(&r), ReportFormat::Json)).unwrap();
        for k in ["tp", "fp", "fn", "tn", "precision", "recall", "f1"] {
            assert!(json.get(k).is_some(), "{k}");
        }
        let csv = emit_report(std::slice::from_ref(&r), ReportFormat::Csv);
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        assert_eq!(csv.lines().nth(1), Some("synth,test,student,0.5,0.5,0.5"));
        let md = emit_report(&[r], ReportFormat::Md);
        assert!(md.contains("| Recall | Precision | F1-measure |"));
        assert!(md.contains("| 50.00 | 50.00 | 50.00 |"));
    }

    #[test]
    fn predictions_lines() {
        let recs = vec![PredictionRecord {
            id: "a".into(),
            label: 1,
            pred: 0,
            p_vulnerable: 0.25,
        }];
        assert_eq!(predictions_jsonl(&recs), "{\"id\":\"a\",\"label\":1,\"pred\":0,\"p_vulnerable\":0.25}\n");
    }
}
