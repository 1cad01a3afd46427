use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manipulate::{non_identity_permutations, BEATS_PER_LOOP};
use crate::error::{Error, Result};
use crate::refine::{LoopPair, Strategy};

/// A loop available for between-song sampling.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LoopRef {
    pub loop_id: String,
    pub song_id: String,
}

/// One strategy, or all five in equal shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum StrategyChoice {
    Single(Strategy),
    Equal,
}

impl fmt::Display for StrategyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyChoice::Single(s) => write!(f, "{s}"),
            StrategyChoice::Equal => f.write_str("equal"),
        }
    }
}

impl From<StrategyChoice> for String {
    fn from(c: StrategyChoice) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for StrategyChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for StrategyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "equal" {
            return Ok(StrategyChoice::Equal);
        }
        match s.parse::<Strategy>()? {
            Strategy::Original => Err(Error::invalid("original is not a negative strategy")),
            st => Ok(StrategyChoice::Single(st)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: StrategyChoice,
    pub seed: u64,
    /// Negatives per positive.
    pub neg_pos_ratio: f64,
    pub beats_per_loop: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyChoice::Equal,
            seed: 0,
            neg_pos_ratio: 1.0,
            beats_per_loop: BEATS_PER_LOOP,
        }
    }
}

/// How a manipulated target loop is rendered from its source audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Manipulation {
    Reverse,
    Shift { beats: usize },
    Rearrange { order: [usize; 4] },
}

impl Manipulation {
    pub fn strategy(&self) -> Strategy {
        match self {
            Manipulation::Reverse => Strategy::Reverse,
            Manipulation::Shift { .. } => Strategy::Shift,
            Manipulation::Rearrange { .. } => Strategy::Rearrange,
        }
    }

    /// Renders the manipulated copy of `clip`.
    pub fn apply(&self, clip: &crate::audio::AudioClip) -> Result<crate::audio::AudioClip> {
        match *self {
            Manipulation::Reverse => super::manipulate::reverse_loop(clip),
            Manipulation::Shift { beats } => Ok(super::manipulate::shift_loop(clip, Some(beats), 0)?.0),
            Manipulation::Rearrange { order } => super::manipulate::apply_permutation(clip, order),
        }
    }

    /// Id suffix naming the strategy and its parameter.
    pub fn tag(&self) -> String {
        match self {
            Manipulation::Reverse => "reverse".to_string(),
            Manipulation::Shift { beats } => format!("shift{beats}"),
            Manipulation::Rearrange { order } => {
                format!("rearrange{}{}{}{}", order[0], order[1], order[2], order[3])
            }
        }
    }
}

/// A loop derived from another by a within-song manipulation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManipulatedLoop {
    pub loop_id: String,
    pub derived_from: String,
    pub song_id: String,
    pub manipulation: Manipulation,
}

pub fn manipulated_id(target: &str, m: &Manipulation) -> String {
    format!("{target}__{}", m.tag())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativeSet {
    pub pairs: Vec<LoopPair>,
    /// Loops the within-song pairs refer to, unique by id.
    pub manipulated: Vec<ManipulatedLoop>,
}

impl NegativeSet {
    pub fn count(&self, strategy: Strategy) -> usize {
        self.pairs.iter().filter(|p| p.strategy == strategy).count()
    }
}

fn distinct_songs(corpus: &[LoopRef]) -> usize {
    corpus.iter().map(|l| &l.song_id).collect::<BTreeSet<_>>().len()
}

/// Two loops from different songs: the first uniform over the corpus, the
/// second uniform over loops of the other songs.
pub fn sample_random(corpus: &[LoopRef], rng: &mut impl Rng) -> Result<LoopPair> {
    if distinct_songs(corpus) < 2 {
        return Err(Error::InsufficientData("random negatives need loops from at least two songs".into()));
    }
    let a = &corpus[rng.gen_range(0..corpus.len())];
    let others: Vec<&LoopRef> = corpus.iter().filter(|l| l.song_id != a.song_id).collect();
    let b = others[rng.gen_range(0..others.len())];
    Ok(LoopPair::negative(
        Strategy::Random,
        &a.loop_id,
        &b.loop_id,
        &a.song_id,
        Some(&b.song_id),
    ))
}

/// Like [`sample_random`] over the loops for which `eligible` holds; the
/// distribution equals rejection sampling on the full corpus.
pub fn sample_selected(
    corpus: &[LoopRef],
    eligible: &dyn Fn(&LoopRef) -> bool,
    rng: &mut impl Rng,
) -> Result<LoopPair> {
    let pool: Vec<LoopRef> = corpus.iter().filter(|l| eligible(l)).cloned().collect();
    if distinct_songs(&pool) < 2 {
        return Err(Error::InsufficientData(
            "selected negatives need eligible loops from at least two songs".into(),
        ));
    }
    let mut pair = sample_random(&pool, rng)?;
    pair.strategy = Strategy::Selected;
    pair.pair_id = format!("neg:selected:{}:{}", pair.loop_a, pair.loop_b);
    Ok(pair)
}

/// Per-strategy counts: `total` split evenly, the first strategies taking
/// one extra each while the remainder lasts.
pub fn stratified_counts(total: usize, strategies: &[Strategy]) -> BTreeMap<Strategy, usize> {
    let n = strategies.len().max(1);
    strategies
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, total / n + usize::from(i < total % n)))
        .collect()
}

fn strategy_rng(seed: u64, strategy: Strategy) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(strategy as u64);
    rng
}

// Every manipulation of a strategy, in the order they are handed out.
fn variants(strategy: Strategy) -> Vec<Manipulation> {
    match strategy {
        Strategy::Reverse => vec![Manipulation::Reverse],
        Strategy::Shift => (1..BEATS_PER_LOOP).map(|beats| Manipulation::Shift { beats }).collect(),
        Strategy::Rearrange => non_identity_permutations()
            .into_iter()
            .map(|order| Manipulation::Rearrange { order })
            .collect(),
        _ => Vec::new(),
    }
}

fn within_song(
    positives: &[LoopPair],
    strategy: Strategy,
    count: usize,
    seed: u64,
    out: &mut NegativeSet,
    seen: &mut BTreeSet<(String, String)>,
) -> Result<()> {
    let mut rng = strategy_rng(seed, strategy);
    let per_pair = 2 * variants(strategy).len();
    if count > per_pair * positives.len() {
        return Err(Error::InsufficientData(format!(
            "{count} {strategy} negatives requested from {} positives (at most {} distinct)",
            positives.len(),
            per_pair * positives.len()
        )));
    }
    let mut order: Vec<usize> = (0..positives.len()).collect();
    order.shuffle(&mut rng);
    let mut made = 0;
    // first pass manipulates loop_b, the second loop_a, later passes reuse
    // pairs with other manipulations of the same strategy
    let mut round = 0;
    while made < count {
        for &i in &order {
            if made == count {
                break;
            }
            let pos = &positives[i];
            let (source, target) = if round % 2 == 0 {
                (&pos.loop_a, &pos.loop_b)
            } else {
                (&pos.loop_b, &pos.loop_a)
            };
            let mut options = variants(strategy);
            options.shuffle(&mut rng);
            let Some(m) = options
                .into_iter()
                .find(|m| !seen.contains(&(source.clone(), manipulated_id(target, m))))
            else {
                continue;
            };
            let target_id = manipulated_id(target, &m);
            seen.insert((source.clone(), target_id.clone()));
            out.pairs.push(LoopPair::negative(strategy, source, &target_id, &pos.song_id, None));
            out.manipulated.push(ManipulatedLoop {
                loop_id: target_id,
                derived_from: target.clone(),
                song_id: pos.song_id.clone(),
                manipulation: m,
            });
            made += 1;
        }
        round += 1;
        if round > 2 * per_pair && made < count {
            return Err(Error::InsufficientData(format!("ran out of distinct {strategy} negatives")));
        }
    }
    Ok(())
}

fn between_songs(
    corpus: &[LoopRef],
    strategy: Strategy,
    count: usize,
    seed: u64,
    eligible: &dyn Fn(&LoopRef) -> bool,
    out: &mut NegativeSet,
    seen: &mut BTreeSet<(String, String)>,
) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let mut rng = strategy_rng(seed, strategy);
    let pool: Vec<LoopRef> = match strategy {
        Strategy::Selected => corpus.iter().filter(|l| eligible(l)).cloned().collect(),
        _ => corpus.to_vec(),
    };
    // ordered pairs across songs bound how many distinct draws exist
    let mut per_song: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &pool {
        *per_song.entry(l.song_id.as_str()).or_default() += 1;
    }
    let n = pool.len();
    let capacity: usize = per_song.values().map(|&c| c * (n - c)).sum();
    let song_of: BTreeMap<&str, &str> = pool.iter().map(|l| (l.loop_id.as_str(), l.song_id.as_str())).collect();
    let taken = seen
        .iter()
        .filter(|(a, b)| match (song_of.get(a.as_str()), song_of.get(b.as_str())) {
            (Some(sa), Some(sb)) => sa != sb,
            _ => false,
        })
        .count();
    let available = capacity.saturating_sub(taken);
    if count > available {
        return Err(Error::InsufficientData(format!(
            "{count} {strategy} negatives requested but only {available} distinct cross-song pairs exist"
        )));
    }
    let mut made = 0;
    let mut attempts = 0usize;
    while made < count {
        let pair = match strategy {
            Strategy::Selected => sample_selected(&pool, &|_| true, &mut rng)?,
            _ => sample_random(&pool, &mut rng)?,
        };
        attempts += 1;
        let key = (pair.loop_a.clone(), pair.loop_b.clone());
        if seen.insert(key) {
            out.pairs.push(pair);
            made += 1;
        } else if attempts > 1000 * count + 10_000 {
            return Err(Error::InsufficientData(format!("could not draw {count} distinct {strategy} negatives")));
        }
    }
    Ok(())
}

/// Negatives for a set of positives: `ratio × positives` pairs, either all
/// from one strategy or split evenly over the five. Within-song strategies
/// pair a positive's source loop with a manipulated copy of its target;
/// between-song strategies draw from `corpus`.
pub fn build_negative_set(
    positives: &[LoopPair],
    corpus: &[LoopRef],
    config: &SamplingConfig,
    eligible: &dyn Fn(&LoopRef) -> bool,
) -> Result<NegativeSet> {
    if !(config.neg_pos_ratio > 0.0 && config.neg_pos_ratio.is_finite()) {
        return Err(Error::invalid(format!("ratio {} must be positive", config.neg_pos_ratio)));
    }
    if config.beats_per_loop != BEATS_PER_LOOP {
        return Err(Error::invalid(format!("loops must have {BEATS_PER_LOOP} beats")));
    }
    if positives.is_empty() {
        return Err(Error::InsufficientData("no positive pairs to balance".into()));
    }
    let total = (config.neg_pos_ratio * positives.len() as f64).round() as usize;
    let counts = match config.strategy {
        StrategyChoice::Equal => stratified_counts(total, &Strategy::NEGATIVE),
        StrategyChoice::Single(s) => BTreeMap::from([(s, total)]),
    };
    let mut out = NegativeSet::default();
    let mut seen: BTreeSet<(String, String)> = positives
        .iter()
        .flat_map(|p| {
            [
                (p.loop_a.clone(), p.loop_b.clone()),
                (p.loop_b.clone(), p.loop_a.clone()),
            ]
        })
        .collect();
    for strategy in Strategy::NEGATIVE {
        let Some(&count) = counts.get(&strategy) else {
            continue;
        };
        if strategy.is_within_song() {
            within_song(positives, strategy, count, config.seed, &mut out, &mut seen)?;
        } else {
            between_songs(corpus, strategy, count, config.seed, eligible, &mut out, &mut seen)?;
        }
    }
    out.manipulated.sort();
    out.manipulated.dedup();
    Ok(out)
}
