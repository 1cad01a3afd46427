//! Classification and ranking metrics over scored pairs and candidate lists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Candidates per ranking task, the target included.
pub const CANDIDATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub f1: f64,
    /// Scores at or above this count as compatible.
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

/// `2 TP / (2 TP + FP + FN)`, 0 when there is nothing to count.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Accuracy and F1 of `score >= threshold` against the labels.
pub fn classify_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ClassificationMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::InsufficientData("no pairs to classify".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ClassificationMetrics {
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        f1: f1_score(tp, fp, fn_),
        threshold,
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
    })
}

/// Positives and negatives must be equally many unless `allow_unbalanced`.
pub fn check_balance(labels: &[bool], allow_unbalanced: bool) -> Result<()> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos != neg && !allow_unbalanced {
        return Err(Error::invalid(format!(
            "classification set has {pos} positives and {neg} negatives; expected 1:1"
        )));
    }
    Ok(())
}

/// The score percentile (1st to 99th, nearest rank) whose threshold gives
/// the best F1; the lowest such threshold wins ties.
pub fn select_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::InsufficientData("threshold selection needs scored, labelled pairs".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, sorted[0]);
    for p in 1..100 {
        let idx = ((p as f64 / 100.0) * (sorted.len() - 1) as f64).round() as usize;
        let t = sorted[idx];
        let f1 = classify_scores(scores, labels, t)?.f1;
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

/// One query, its candidates and the true co-occurring loop among them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingTask {
    pub query: String,
    pub candidates: Vec<String>,
    pub target: String,
}

impl RankingTask {
    pub fn target_index(&self) -> Result<usize> {
        if self.candidates.len() != CANDIDATES {
            return Err(Error::invalid(format!(
                "task for {} has {} candidates, expected {CANDIDATES}",
                self.query,
                self.candidates.len()
            )));
        }
        let mut sorted: Vec<&String> = self.candidates.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("task for {} repeats a candidate", self.query)));
        }
        self.candidates
            .iter()
            .position(|c| *c == self.target)
            .ok_or_else(|| Error::invalid(format!("target {} missing from the candidates of {}", self.target, self.query)))
    }
}

/// 1-based rank of `scores[target]` in descending order; equal scores keep
/// input order. The flag reports whether any other candidate tied the target.
pub fn rank_of(scores: &[f64], target: usize) -> (usize, bool) {
    let t = scores[target];
    let mut rank = 1;
    let mut tied = false;
    for (j, &s) in scores.iter().enumerate() {
        if j == target {
            continue;
        }
        if s > t {
            rank += 1;
        } else if s == t {
            tied = true;
            if j < target {
                rank += 1;
            }
        }
    }
    (rank, tied)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub avg_rank: f64,
    pub top10: f64,
    pub top30: f64,
    pub top50: f64,
    pub tasks: usize,
    /// Tasks in which another candidate scored exactly the target's score.
    pub tied_tasks: usize,
    pub ranks: Vec<usize>,
}

/// Aggregates per-task `(rank, tied)` results.
pub fn ranking_metrics(results: &[(usize, bool)]) -> Result<RankingMetrics> {
    if results.is_empty() {
        return Err(Error::InsufficientData("no ranking tasks".into()));
    }
    let n = results.len() as f64;
    let top = |k: usize| results.iter().filter(|(r, _)| *r <= k).count() as f64 / n;
    Ok(RankingMetrics {
        avg_rank: results.iter().map(|(r, _)| *r as f64).sum::<f64>() / n,
        top10: top(10),
        top30: top(30),
        top50: top(50),
        tasks: results.len(),
        tied_tasks: results.iter().filter(|(_, t)| *t).count(),
        ranks: results.iter().map(|(r, _)| *r).collect(),
    })
}
