//! Uniform pair scoring for the neural models and the rule-based baseline.
//! Higher scores mean more compatible.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::mashability::{beat_sync_features, mashability_of_features, BeatSyncFeatures};
use crate::neural::{loop_features, mix_features, InputMode, Model, ModelKind};

/// Loop audio by loop id.
pub type LoopLibrary = BTreeMap<String, AudioClip>;

pub trait PairScorer {
    fn name(&self) -> String;

    fn score(&mut self, source: &str, target: &str) -> Result<f64>;

    fn score_many(&mut self, query: &str, candidates: &[String]) -> Result<Vec<f64>> {
        candidates.iter().map(|c| self.score(query, c)).collect()
    }
}

fn clip<'a>(library: &'a LoopLibrary, id: &str) -> Result<&'a AudioClip> {
    library
        .get(id)
        .ok_or_else(|| Error::invalid(format!("loop {id} is not in the library")))
}

/// Scores from a closure over loop ids.
pub struct FnScorer<F> {
    pub name: String,
    pub f: F,
}

impl<F: FnMut(&str, &str) -> f64> PairScorer for FnScorer<F> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn score(&mut self, source: &str, target: &str) -> Result<f64> {
        Ok((self.f)(source, target))
    }
}

/// Pair classifier probability.
pub struct CnnScorer {
    model: Model,
    library: Arc<LoopLibrary>,
}

impl CnnScorer {
    pub fn new(model: Model, library: Arc<LoopLibrary>) -> Result<Self> {
        if model.kind() != ModelKind::Cnn {
            return Err(Error::invalid("the classifier scorer needs a cnn checkpoint"));
        }
        Ok(Self { model, library })
    }

    fn maps(&self, source: &str, target: &str) -> Result<Vec<ndarray::Array2<f64>>> {
        let (a, b) = (clip(&self.library, source)?, clip(&self.library, target)?);
        match self.model.input_mode() {
            InputMode::Stack => Ok(vec![loop_features(a)?, loop_features(b)?]),
            _ => Ok(vec![mix_features(a, b)?]),
        }
    }
}

impl PairScorer for CnnScorer {
    fn name(&self) -> String {
        "cnn".into()
    }

    fn score(&mut self, source: &str, target: &str) -> Result<f64> {
        let maps = self.maps(source, target)?;
        let refs: Vec<_> = maps.iter().collect();
        Ok(self.model.classifier_probabilities(&refs)?[0])
    }

    fn score_many(&mut self, query: &str, candidates: &[String]) -> Result<Vec<f64>> {
        let mut maps = Vec::new();
        for c in candidates {
            maps.extend(self.maps(query, c)?);
        }
        let refs: Vec<_> = maps.iter().collect();
        self.model.classifier_probabilities(&refs)
    }
}

/// Negated embedding distance; embeddings are cached per loop.
pub struct SnnScorer {
    model: Model,
    library: Arc<LoopLibrary>,
    cache: BTreeMap<String, Vec<f64>>,
}

impl SnnScorer {
    pub fn new(model: Model, library: Arc<LoopLibrary>) -> Result<Self> {
        if model.kind() != ModelKind::Snn {
            return Err(Error::invalid("the embedding scorer needs an snn checkpoint"));
        }
        Ok(Self {
            model,
            library,
            cache: BTreeMap::new(),
        })
    }

    fn embedding(&mut self, id: &str) -> Result<Vec<f64>> {
        if let Some(e) = self.cache.get(id) {
            return Ok(e.clone());
        }
        let e = self.model.embed_clip(clip(&self.library, id)?)?;
        self.cache.insert(id.to_string(), e.clone());
        Ok(e)
    }
}

impl PairScorer for SnnScorer {
    fn name(&self) -> String {
        "snn".into()
    }

    fn score(&mut self, source: &str, target: &str) -> Result<f64> {
        let a = self.embedding(source)?;
        let b = self.embedding(target)?;
        Ok(-crate::neural::snn_distance(&a, &b)?)
    }
}

/// Rule-based mashability. A silent loop scores 0, the bottom of the range.
pub struct MashabilityScorer {
    library: Arc<LoopLibrary>,
    cache: BTreeMap<String, BeatSyncFeatures>,
}

impl MashabilityScorer {
    pub fn new(library: Arc<LoopLibrary>) -> Self {
        Self {
            library,
            cache: BTreeMap::new(),
        }
    }

    fn features(&mut self, id: &str) -> Result<BeatSyncFeatures> {
        if let Some(f) = self.cache.get(id) {
            return Ok(f.clone());
        }
        let f = beat_sync_features(clip(&self.library, id)?)?;
        self.cache.insert(id.to_string(), f.clone());
        Ok(f)
    }
}

impl PairScorer for MashabilityScorer {
    fn name(&self) -> String {
        "automashupper-style".into()
    }

    fn score(&mut self, source: &str, target: &str) -> Result<f64> {
        let a = self.features(source)?;
        let b = self.features(target)?;
        match mashability_of_features(&a, &b) {
            Ok(m) => Ok(m.score),
            Err(Error::Undeterminable(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    }
}
