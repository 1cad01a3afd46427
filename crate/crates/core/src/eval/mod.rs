//! Objective evaluation over any pair scorer: balanced classification and
//! 100-candidate ranking.

mod metrics;
mod report;
mod scorer;
mod sets;

pub use metrics::{
    check_balance, classify_scores, f1_score, rank_of, ranking_metrics, select_threshold, ClassificationMetrics,
    RankingMetrics, RankingTask, CANDIDATES,
};
pub use report::{reference_results, EvalReport, ReferenceRow};
pub use scorer::{CnnScorer, FnScorer, LoopLibrary, MashabilityScorer, PairScorer, SnnScorer};
pub use sets::{build_eval_sets, EvalSetConfig, EvalSets};

use crate::error::Result;
use crate::refine::{Label, LoopPair};

/// How scores become compatible / incompatible decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    /// Percentile of the set's own scores with the best F1.
    BestF1,
}

pub fn classification_eval(
    scorer: &mut dyn PairScorer,
    pairs: &[LoopPair],
    threshold: Threshold,
    allow_unbalanced: bool,
) -> Result<ClassificationMetrics> {
    let labels: Vec<bool> = pairs.iter().map(|p| p.label == Label::Positive).collect();
    check_balance(&labels, allow_unbalanced)?;
    let scores = pairs
        .iter()
        .map(|p| scorer.score(&p.loop_a, &p.loop_b))
        .collect::<Result<Vec<_>>>()?;
    let t = match threshold {
        Threshold::Fixed(t) => t,
        Threshold::BestF1 => select_threshold(&scores, &labels)?,
    };
    classify_scores(&scores, &labels, t)
}

pub fn ranking_eval(scorer: &mut dyn PairScorer, tasks: &[RankingTask]) -> Result<RankingMetrics> {
    let mut results = Vec::with_capacity(tasks.len());
    for task in tasks {
        let target = task.target_index()?;
        let scores = scorer.score_many(&task.query, &task.candidates)?;
        results.push(rank_of(&scores, target));
    }
    ranking_metrics(&results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tasks(n: usize) -> Vec<RankingTask> {
        (0..n)
            .map(|t| RankingTask {
                query: format!("q{t}"),
                candidates: (0..CANDIDATES).map(|i| format!("t{t}-c{i}")).collect(),
                target: format!("t{t}-c{}", (t * 37) % CANDIDATES),
            })
            .collect()
    }

    fn target_of(tasks: &[RankingTask]) -> std::collections::BTreeSet<String> {
        tasks.iter().map(|t| t.target.clone()).collect()
    }

    #[test]
    fn oracle_and_anti_oracle() {
        let ts = tasks(20);
        let targets = target_of(&ts);
        let mut oracle = FnScorer {
            name: "oracle".into(),
            f: |_: &str, c: &str| if targets.contains(c) { 1.0 } else { 0.0 },
        };
        let m = ranking_eval(&mut oracle, &ts).unwrap();
        assert_eq!((m.avg_rank, m.top10), (1.0, 1.0));
        let mut anti = FnScorer {
            name: "anti".into(),
            f: |_: &str, c: &str| if targets.contains(c) { -1.0 } else { 0.0 },
        };
        let m = ranking_eval(&mut anti, &ts).unwrap();
        assert_eq!((m.avg_rank, m.top50), (100.0, 0.0));
    }

    #[test]
    fn random_scores_rank_near_the_middle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut random = FnScorer {
            name: "random".into(),
            f: move |_: &str, _: &str| rng.gen::<f64>(),
        };
        let m = ranking_eval(&mut random, &tasks(1000)).unwrap();
        assert!((m.avg_rank - 50.5).abs() < 2.0, "{}", m.avg_rank);
    }

    #[test]
    fn constant_scorer_is_flagged_as_tied() {
        let mut constant = FnScorer {
            name: "c".into(),
            f: |_: &str, _: &str| 0.5,
        };
        let ts = tasks(3);
        let m = ranking_eval(&mut constant, &ts).unwrap();
        assert_eq!(m.tied_tasks, 3);
        // ties keep candidate order, so the rank is the target's position
        assert_eq!(m.ranks[1], 38);
    }
}
