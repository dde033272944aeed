use std::fmt::Write as _;

use serde::Serialize;

use super::pipeline::RunRecord;
use super::{HarnessError, HarnessResult};

/// One run's test metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub track: String,
    pub config: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub hamming_loss: f64,
    pub macro_auc: f64,
    pub precision_at_5: Option<f64>,
    pub mean_ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

const HEADER: [&str; 11] = [
    "model",
    "track",
    "config",
    "precision",
    "recall",
    "f1",
    "accuracy",
    "hamming_loss",
    "macro_auc",
    "precision_at_5",
    "mean_ap",
];

impl ComparisonRow {
    fn cells(&self, digits: usize) -> Vec<String> {
        let f = |v: f64| format!("{v:.digits$}");
        vec![
            self.model.clone(),
            self.track.clone(),
            self.config.clone(),
            f(self.precision),
            f(self.recall),
            f(self.f1),
            f(self.accuracy),
            f(self.hamming_loss),
            f(self.macro_auc),
            self.precision_at_5.map_or_else(String::new, f),
            f(self.mean_ap),
        ]
    }
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.cells(6)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Space-aligned columns, text left and numbers right.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = std::iter::once(HEADER.iter().map(|s| s.to_string()).collect())
            .chain(self.rows.iter().map(|r| r.cells(4)))
            .collect();
        let widths: Vec<usize> = (0..HEADER.len())
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c < 3 {
                        format!("{v:<w$}", w = widths[c])
                    } else {
                        format!("{v:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", line.join("  ").trim_end());
        }
        s
    }
}

/// Test metrics of every run, best test F1 first. All runs must share a
/// dataset.
pub fn compare_runs(records: &[RunRecord]) -> HarnessResult<ComparisonTable> {
    if let Some(first) = records.first() {
        if let Some(other) = records.iter().find(|r| r.dataset_hash != first.dataset_hash) {
            return Err(HarnessError::DatasetMismatch(
                first.dataset_hash.clone(),
                other.dataset_hash.clone(),
            ));
        }
    }
    let mut rows: Vec<ComparisonRow> = records
        .iter()
        .map(|r| ComparisonRow {
            model: r.model.clone(),
            track: r.track.clone(),
            config: r.config_hash.chars().take(8).collect(),
            precision: r.test.precision,
            recall: r.test.recall,
            f1: r.test.f1,
            accuracy: r.test.accuracy,
            hamming_loss: r.test.hamming_loss,
            macro_auc: r.test.macro_auc,
            precision_at_5: r.test.precision_at_5,
            mean_ap: r.test.mean_ap,
        })
        .collect();
    rows.sort_by(|a, b| b.f1.total_cmp(&a.f1).then_with(|| a.model.cmp(&b.model)));
    Ok(ComparisonTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsReport;
    use std::collections::BTreeMap;

    fn metrics(f1: f64) -> MetricsReport {
        MetricsReport {
            n_examples: 10,
            n_labels: 5,
            precision: f1,
            recall: f1,
            f1,
            accuracy: f1,
            hamming_loss: 1.0 - f1,
            macro_auc: 0.5,
            precision_at_5: Some(0.2),
            mean_ap: 0.4,
            ap: vec![],
            auc: vec![],
            nan_replacements: 0,
            auc_excluded: 0,
            ap_excluded: 0,
        }
    }

    fn record(model: &str, ds: &str, f1: f64) -> RunRecord {
        RunRecord {
            config_hash: format!("{model:0>16}"),
            dataset_hash: ds.into(),
            features_hash: "f".into(),
            model: model.into(),
            family: "gru".into(),
            track: "wordseq".into(),
            started_at: 0,
            finished_at: 0,
            n_train: 1,
            n_val: 1,
            n_test: 1,
            history: vec![],
            stopped_epoch: 1,
            best_epoch: 1,
            train: metrics(f1),
            test: metrics(f1),
            artifacts: BTreeMap::new(),
        }
    }

    #[test]
    fn sorted_by_test_f1() {
        let t = compare_runs(&[record("lstm", "d", 0.53), record("gru", "d", 0.69)]).unwrap();
        assert_eq!(t.rows[0].model, "gru");
        assert!((t.rows[0].f1 - 0.69).abs() < 1e-15);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("gru,"));
        let text = t.to_text();
        assert!(text.lines().nth(1).unwrap().starts_with("gru "));
    }

    #[test]
    fn single_run() {
        assert_eq!(compare_runs(&[record("gru", "d", 0.5)]).unwrap().rows.len(), 1);
    }

    #[test]
    fn mixed_datasets_named() {
        let e = compare_runs(&[record("a", "aaaa", 0.5), record("b", "bbbb", 0.4)]).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("aaaa") && msg.contains("bbbb"));
    }
}
