//! Training, evaluation and ad hoc ranking driven by a split corpus.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;

use super::pipeline::selected_eligibility;
use super::{read_bytes, Corpus, FeatureRecord, LoopRecord};
use crate::audio::MEL_NORM;
use crate::error::{Error, Result};
use crate::eval::{
    build_eval_sets, classification_eval, ranking_eval, CnnScorer, EvalReport, EvalSetConfig, LoopLibrary,
    MashabilityScorer, PairScorer, SnnScorer, Threshold,
};
use crate::negatives::{LoopRef, StrategyChoice};
use crate::neural::{input_mode, loop_features, train, InputMode, Model, ModelCheckpoint, ModelKind, PairSample, TrainConfig, TrainingData};
use crate::refine::{Label, LoopPair};

/// Reads a cached log-mel map.
pub fn load_feature(corpus: &Corpus, record: &FeatureRecord) -> Result<Array2<f64>> {
    let path = corpus.path(&record.path);
    if record.mel_norm != MEL_NORM {
        return Err(Error::Format {
            path,
            reason: format!("computed with {} mel filters, expected {MEL_NORM}", record.mel_norm),
        });
    }
    let bytes = read_bytes(&path)?;
    if bytes.len() != record.frames * record.bins * 8 {
        return Err(Error::Format {
            path,
            reason: format!("{} bytes for a {}x{} map", bytes.len(), record.frames, record.bins),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    Array2::from_shape_vec((record.frames, record.bins), values).map_err(|e| Error::shape(e.to_string()))
}

fn loop_index(corpus: &Corpus) -> Result<BTreeMap<String, LoopRecord>> {
    Ok(corpus.loops()?.into_iter().map(|l| (l.loop_id.clone(), l)).collect())
}

fn record<'a>(loops: &'a BTreeMap<String, LoopRecord>, id: &str) -> Result<&'a LoopRecord> {
    loops
        .get(id)
        .ok_or_else(|| Error::invalid(format!("loop {id} is not in the corpus")))
}

/// Trains on the train songs and validates on the val songs. Negatives come
/// from the corpus, filtered to `config.negative_strategy` unless it is
/// `equal`.
pub fn train_from_corpus(corpus: &Corpus, kind: ModelKind, config: &TrainConfig) -> Result<ModelCheckpoint> {
    let splits = corpus.require_splits()?;
    let choice: StrategyChoice = config.negative_strategy.parse()?;
    let positives = corpus.pairs()?;
    let negatives: Vec<LoopPair> = corpus
        .negatives()?
        .into_iter()
        .filter(|p| match choice {
            StrategyChoice::Equal => true,
            StrategyChoice::Single(s) => p.strategy == s,
        })
        .collect();
    let pick = |songs: &BTreeSet<&str>| -> Vec<&LoopPair> {
        positives
            .iter()
            .chain(&negatives)
            .filter(|p| songs.contains(p.song_id.as_str()))
            .collect()
    };
    let (train_pairs, val_pairs) = (pick(&splits.train_set()), pick(&splits.val_set()));
    if !train_pairs.iter().any(|p| p.label == Label::Negative) {
        return Err(Error::InsufficientData(format!(
            "no {choice} negatives for the train songs; run negatives with that strategy"
        )));
    }

    let loops = loop_index(corpus)?;
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut ids: Vec<String> = Vec::new();
    let mut to_triples = |pairs: &[&LoopPair]| -> Vec<(usize, usize, f64)> {
        let mut slot = |id: &str| {
            *index.entry(id.to_string()).or_insert_with(|| {
                ids.push(id.to_string());
                ids.len() - 1
            })
        };
        pairs
            .iter()
            .map(|p| (slot(&p.loop_a), slot(&p.loop_b), p.label.as_target()))
            .collect()
    };
    let train_triples = to_triples(&train_pairs);
    let val_triples = to_triples(&val_pairs);

    let mode = input_mode(kind, config.channel_stack);
    let data = if mode == InputMode::Mix {
        let clips = ids
            .iter()
            .map(|id| corpus.loop_audio(record(&loops, id)?))
            .collect::<Result<Vec<_>>>()?;
        TrainingData::from_clips(mode, &clips, &train_triples, &val_triples)?
    } else {
        let cached: BTreeMap<String, FeatureRecord> =
            corpus.features()?.into_iter().map(|f| (f.loop_id.clone(), f)).collect();
        let maps = ids
            .iter()
            .map(|id| match cached.get(id) {
                Some(f) => load_feature(corpus, f),
                None => loop_features(&corpus.loop_audio(record(&loops, id)?)?),
            })
            .collect::<Result<Vec<_>>>()?;
        let samples = |t: &[(usize, usize, f64)]| t.iter().map(|&(a, b, label)| PairSample { a, b, label }).collect();
        TrainingData {
            maps,
            train: samples(&train_triples),
            val: samples(&val_triples),
        }
    };
    train(&data, kind, config)
}

/// A trained model or the rule-based baseline.
#[derive(Debug, Clone)]
pub enum ScorerChoice {
    Model(ModelCheckpoint),
    Mashability,
}

impl ScorerChoice {
    fn negative_strategy(&self) -> String {
        match self {
            ScorerChoice::Model(c) => c.config.negative_strategy.clone(),
            ScorerChoice::Mashability => "-".into(),
        }
    }

    fn threshold(&self) -> Threshold {
        match self {
            ScorerChoice::Model(c) if c.kind == ModelKind::Cnn => Threshold::Fixed(0.5),
            _ => Threshold::BestF1,
        }
    }

    fn scorer(self, library: Arc<LoopLibrary>) -> Result<Box<dyn PairScorer>> {
        Ok(match self {
            ScorerChoice::Model(c) => match c.kind {
                ModelKind::Cnn => Box::new(CnnScorer::new(Model::new(c)?, library)?),
                ModelKind::Snn => Box::new(SnnScorer::new(Model::new(c)?, library)?),
            },
            ScorerChoice::Mashability => Box::new(MashabilityScorer::new(library)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Classify,
    Rank,
    Both,
}

fn refs<'a>(loops: impl Iterator<Item = &'a LoopRecord>) -> Vec<LoopRef> {
    loops
        .map(|l| LoopRef {
            loop_id: l.loop_id.clone(),
            song_id: l.song_id.clone(),
        })
        .collect()
}

/// Classification on the val songs and ranking on the held-out test pairs.
pub fn evaluate_corpus(corpus: &Corpus, choice: ScorerChoice, task: EvalTask, config: &EvalSetConfig) -> Result<EvalReport> {
    let splits = corpus.require_splits()?;
    let mined = corpus.mined_loops()?;
    let positives = corpus.pairs()?;
    let (val_songs, test_songs) = (splits.val_set(), splits.test_set());
    let test_pair_ids: BTreeSet<&str> = splits.test_pairs.iter().map(String::as_str).collect();
    let val_positives: Vec<LoopPair> = if task == EvalTask::Rank {
        Vec::new()
    } else {
        positives
            .iter()
            .filter(|p| val_songs.contains(p.song_id.as_str()))
            .cloned()
            .collect()
    };
    let test_positives: Vec<LoopPair> = if task == EvalTask::Classify {
        Vec::new()
    } else {
        positives
            .iter()
            .filter(|p| test_pair_ids.contains(p.pair_id.as_str()))
            .cloned()
            .collect()
    };
    let val_loops = refs(mined.iter().filter(|l| val_songs.contains(l.song_id.as_str())));
    let test_loops = refs(mined.iter().filter(|l| test_songs.contains(l.song_id.as_str())));
    let all_loops = refs(mined.iter());

    let by_id: BTreeMap<&str, &LoopRecord> = mined.iter().map(|l| (l.loop_id.as_str(), l)).collect();
    // the drum / bass detector only runs on loops the selected strategy draws
    let memo: RefCell<BTreeMap<String, bool>> = RefCell::new(BTreeMap::new());
    let eligible = |r: &LoopRef| -> bool {
        if let Some(&e) = memo.borrow().get(&r.loop_id) {
            return e;
        }
        let e = by_id
            .get(r.loop_id.as_str())
            .and_then(|l| selected_eligibility(corpus, &[l]).ok())
            .and_then(|m| m.get(&r.loop_id).copied())
            .unwrap_or(false);
        memo.borrow_mut().insert(r.loop_id.clone(), e);
        e
    };
    if task != EvalTask::Rank && val_positives.is_empty() {
        return Err(Error::InsufficientData("no validation pairs to classify".into()));
    }
    if task != EvalTask::Classify && test_positives.is_empty() {
        return Err(Error::InsufficientData("no held-out test pairs to rank".into()));
    }
    let sets = build_eval_sets(&val_positives, &test_positives, &val_loops, &test_loops, &all_loops, &eligible, config)?;

    let mut needed: BTreeSet<&str> = BTreeSet::new();
    for p in &sets.classification {
        needed.insert(&p.loop_a);
        needed.insert(&p.loop_b);
    }
    for t in &sets.ranking {
        needed.insert(&t.query);
        needed.extend(t.candidates.iter().map(String::as_str));
    }
    let manipulated: BTreeMap<&str, _> = sets.manipulated.iter().map(|m| (m.loop_id.as_str(), m)).collect();
    let mut library = LoopLibrary::new();
    for id in needed {
        let clip = if let Some(m) = manipulated.get(id) {
            let source = by_id
                .get(m.derived_from.as_str())
                .ok_or_else(|| Error::invalid(format!("no source loop for {id}")))?;
            m.manipulation.apply(&corpus.loop_audio(source)?)?
        } else {
            let rec = by_id
                .get(id)
                .ok_or_else(|| Error::invalid(format!("loop {id} is not in the corpus")))?;
            corpus.loop_audio(rec)?
        };
        library.insert(id.to_string(), clip);
    }

    let mut report = EvalReport::new(
        match &choice {
            ScorerChoice::Model(c) => c.kind.to_string(),
            ScorerChoice::Mashability => "automashupper-style".into(),
        },
        choice.negative_strategy(),
    );
    let threshold = choice.threshold();
    let mut scorer = choice.scorer(Arc::new(library))?;
    if task != EvalTask::Rank {
        report.classification = Some(classification_eval(scorer.as_mut(), &sets.classification, threshold, false)?);
    }
    if task != EvalTask::Classify {
        report.ranking = Some(ranking_eval(scorer.as_mut(), &sets.ranking)?);
    }
    Ok(report)
}

/// Mined loops of a named split ("train", "val", "test" or "all"), or the
/// ids listed one per line in a file.
pub fn resolve_pool(corpus: &Corpus, pool: &str) -> Result<Vec<String>> {
    let mined = corpus.mined_loops()?;
    let songs: Option<BTreeSet<String>> = match pool {
        "all" => None,
        "train" | "val" | "test" => {
            let s = corpus.require_splits()?;
            Some(match pool {
                "train" => s.train,
                "val" => s.val,
                _ => s.test,
            }
            .into_iter()
            .collect())
        }
        path => {
            let text = String::from_utf8_lossy(&read_bytes(Path::new(path))?).into_owned();
            return Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect());
        }
    };
    Ok(mined
        .into_iter()
        .filter(|l| songs.as_ref().is_none_or(|s| s.contains(&l.song_id)))
        .map(|l| l.loop_id)
        .collect())
}

/// Scores every pool loop against `query`, best first; ties keep pool order.
pub fn rank_pool(corpus: &Corpus, choice: ScorerChoice, query: &str, pool: &[String]) -> Result<Vec<(String, f64)>> {
    let loops = loop_index(corpus)?;
    let candidates: Vec<String> = pool.iter().filter(|c| c.as_str() != query).cloned().collect();
    if candidates.is_empty() {
        return Err(Error::InsufficientData("the pool has no candidates besides the query".into()));
    }
    let mut library = LoopLibrary::new();
    for id in candidates.iter().map(String::as_str).chain([query]) {
        library.insert(id.to_string(), corpus.loop_audio(record(&loops, id)?)?);
    }
    let mut scorer = choice.scorer(Arc::new(library))?;
    let scores = scorer.score_many(query, &candidates)?;
    let mut ranked: Vec<(String, f64)> = candidates.into_iter().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ranked)
}
