//! Evaluation report as JSON and as a text table, with full-corpus reference
//! results alongside for comparison.

use serde::{Deserialize, Serialize};

use super::metrics::{ClassificationMetrics, RankingMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub model: String,
    pub negative_strategy: String,
    pub accuracy: f64,
    pub f1: f64,
    pub avg_rank: f64,
    pub top10: f64,
    pub top30: f64,
    pub top50: f64,
}

/// Published results of both models trained on the 3,508-song corpus, one
/// row per negative sampling strategy.
pub fn reference_results() -> Vec<ReferenceRow> {
    let rows: [(&str, &str, [f64; 6]); 10] = [
        ("cnn", "random", [0.60, 0.59, 43.0, 0.13, 0.35, 0.59]),
        ("cnn", "selected", [0.59, 0.59, 43.1, 0.13, 0.29, 0.62]),
        ("cnn", "reverse", [0.63, 0.62, 41.2, 0.19, 0.42, 0.62]),
        ("cnn", "shift", [0.57, 0.56, 49.0, 0.11, 0.34, 0.54]),
        ("cnn", "rearrange", [0.57, 0.57, 47.7, 0.10, 0.31, 0.57]),
        ("snn", "random", [0.51, 0.47, 34.2, 0.27, 0.52, 0.74]),
        ("snn", "selected", [0.52, 0.47, 42.8, 0.18, 0.39, 0.59]),
        ("snn", "reverse", [0.53, 0.48, 42.7, 0.16, 0.37, 0.62]),
        ("snn", "shift", [0.53, 0.52, 43.0, 0.16, 0.41, 0.65]),
        ("snn", "rearrange", [0.53, 0.53, 44.2, 0.16, 0.40, 0.60]),
    ];
    rows.iter()
        .map(|(m, s, v)| ReferenceRow {
            model: m.to_string(),
            negative_strategy: s.to_string(),
            accuracy: v[0],
            f1: v[1],
            avg_rank: v[2],
            top10: v[3],
            top30: v[4],
            top50: v[5],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Scorer name: cnn, snn or automashupper-style.
    pub model: String,
    pub negative_strategy: String,
    pub classification: Option<ClassificationMetrics>,
    pub ranking: Option<RankingMetrics>,
    pub reference: Vec<ReferenceRow>,
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

impl EvalReport {
    pub fn new(model: impl Into<String>, negative_strategy: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            negative_strategy: negative_strategy.into(),
            classification: None,
            ranking: None,
            reference: reference_results(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Measured row first, then the reference rows.
    pub fn table(&self) -> String {
        let header = format!(
            "{:<28} {:<10} {:>8} {:>8} {:>9} {:>6} {:>6} {:>6}\n",
            "model", "negatives", "accuracy", "f1", "avg_rank", "top10", "top30", "top50"
        );
        let mut out = header.clone();
        out.push_str(&"-".repeat(header.len() - 1));
        out.push('\n');
        let c = self.classification.as_ref();
        let r = self.ranking.as_ref();
        out.push_str(&format!(
            "{:<28} {:<10} {:>8} {:>8} {:>9} {:>6} {:>6} {:>6}\n",
            format!("{} (this run)", self.model),
            self.negative_strategy,
            cell(c.map(|m| m.accuracy), 2),
            cell(c.map(|m| m.f1), 2),
            cell(r.map(|m| m.avg_rank), 1),
            cell(r.map(|m| m.top10), 2),
            cell(r.map(|m| m.top30), 2),
            cell(r.map(|m| m.top50), 2),
        ));
        if let Some(r) = r {
            if r.tied_tasks > 0 {
                out.push_str(&format!("  {} of {} ranking tasks had tied scores\n", r.tied_tasks, r.tasks));
            }
        }
        for row in &self.reference {
            out.push_str(&format!(
                "{:<28} {:<10} {:>8.2} {:>8.2} {:>9.1} {:>6.2} {:>6.2} {:>6.2}\n",
                format!("{} (full-corpus reference)", row.model),
                row.negative_strategy,
                row.accuracy,
                row.f1,
                row.avg_rank,
                row.top10,
                row.top30,
                row.top50
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rows_cover_both_models_and_five_strategies() {
        let rows = reference_results();
        assert_eq!(rows.len(), 10);
        let best = rows.iter().find(|r| r.model == "snn" && r.negative_strategy == "random").unwrap();
        assert_eq!((best.avg_rank, best.top10, best.top50), (34.2, 0.27, 0.74));
        let cnn = rows.iter().find(|r| r.model == "cnn" && r.negative_strategy == "reverse").unwrap();
        assert_eq!((cnn.accuracy, cnn.f1), (0.63, 0.62));
        for r in &rows {
            assert!(r.top10 <= r.top30 && r.top30 <= r.top50);
        }
    }

    #[test]
    fn table_lists_run_then_references() {
        let report = EvalReport::new("cnn", "reverse");
        let table = report.table();
        assert_eq!(table.lines().count(), 2 + 1 + 10);
        assert!(table.lines().nth(2).unwrap().contains("this run"));
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}
