//! Pipeline stages over a corpus directory.
//!
//! Each stage records a fingerprint of its inputs (upstream manifests plus
//! the settings it reads) and of the files it produced. A rerun whose input
//! fingerprint matches and whose outputs are untouched is skipped. Songs that
//! fail in a stage are logged and left out; stages never touch source audio.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::records::{FeatureRecord, LoopRecord, SongRecord};
use super::split::split_songs;
use super::{
    read_bytes, read_json, write_atomic, write_json, Corpus, DERIVED, FEATURES, LOOPS, NEGATIVES, PAIRS, SPLITS, STATE,
};
use crate::audio::wav::{write_wav, WavFormat};
use crate::audio::{LOOP_SECONDS, MEL_NORM};
use crate::error::{Error, Result};
use crate::extract::{BarGrid, LoopLayout, DEFAULT_ITERATIONS};
use crate::mining::{factorize_song, select_loops, selection_pairs, LoopCandidate, LoopSelection, MiningConfig};
use crate::negatives::{
    build_negative_set, DrumBassDetector, HeuristicDetector, LoopRef, SamplingConfig, StrategyChoice, BEATS_PER_LOOP,
};
use crate::neural::loop_features;
use crate::refine::{LoopPair, Strategy, ACTIVE_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub beats_per_bar: usize,
    /// Loop templates per song; `None` picks `min(8, bars / 2)`.
    pub rank: Option<usize>,
    pub iterations: usize,
    pub threshold: f64,
    pub max_loops_per_song: Option<usize>,
    pub negative_strategy: StrategyChoice,
    pub neg_pos_ratio: f64,
    /// Songs held out for ranking, one pair each.
    pub test_songs: usize,
    /// Worker threads for per-song stages; does not affect results.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            beats_per_bar: 4,
            rank: None,
            iterations: DEFAULT_ITERATIONS,
            threshold: ACTIVE_THRESHOLD,
            max_loops_per_song: None,
            negative_strategy: StrategyChoice::Equal,
            neg_pos_ratio: 1.0,
            test_songs: 0,
            jobs: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if matches!(value, "" | "none" | "auto") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl PipelineConfig {
    pub fn mining(&self) -> MiningConfig {
        MiningConfig {
            beats_per_bar: self.beats_per_bar,
            rank: self.rank,
            iterations: self.iterations,
            seed: self.seed,
            threshold: self.threshold,
            max_loops: self.max_loops_per_song,
        }
    }

    /// Applies one `key=value` setting. Returns false for keys this
    /// configuration does not know.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "beats_per_bar" => self.beats_per_bar = parse(key, value)?,
            "rank" => self.rank = parse_optional(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "max_loops_per_song" => self.max_loops_per_song = parse_optional(key, value)?,
            "strategy" | "negative_strategy" => self.negative_strategy = value.parse()?,
            "ratio" | "neg_pos_ratio" => self.neg_pos_ratio = parse(key, value)?,
            "test_songs" => self.test_songs = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Extract,
    Dedup,
    Pairs,
    Split,
    Negatives,
    Featurize,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Extract,
        Stage::Dedup,
        Stage::Pairs,
        Stage::Split,
        Stage::Negatives,
        Stage::Featurize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Dedup => "dedup",
            Stage::Pairs => "pairs",
            Stage::Split => "split",
            Stage::Negatives => "negatives",
            Stage::Featurize => "featurize",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub summary: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct StageState {
    input: String,
    output: String,
    summary: String,
}

/// Hashes labelled byte strings; labels keep adjacent fields apart.
struct Fingerprint(Sha256);

impl Fingerprint {
    fn new(stage: Stage) -> Self {
        let mut f = Fingerprint(Sha256::new());
        f.add("stage", stage.name().as_bytes());
        f
    }

    fn add(&mut self, label: &str, bytes: &[u8]) {
        for part in [label.as_bytes(), bytes] {
            self.0.update((part.len() as u64).to_le_bytes());
            self.0.update(part);
        }
    }

    fn add_json<T: Serialize>(&mut self, label: &str, value: &T) {
        self.add(label, &serde_json::to_vec(value).expect("settings serialize"));
    }

    /// Content of each file, or a marker for missing ones.
    fn add_files(&mut self, corpus: &Corpus, files: &[PathBuf]) -> Result<()> {
        for rel in files {
            let path = corpus.path(rel);
            let bytes = if path.exists() { read_bytes(&path)? } else { b"<missing>".to_vec() };
            self.add(&rel.to_string_lossy(), &bytes);
        }
        Ok(())
    }

    fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// Corpus-relative paths of the files in a directory, sorted.
fn dir_files(corpus: &Corpus, dir: &str) -> Result<Vec<PathBuf>> {
    let path = corpus.path(dir);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&path).map_err(|e| Error::io(&path, e))? {
        let entry = entry.map_err(|e| Error::io(&path, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.ends_with(".tmp") {
            out.push(Path::new(dir).join(name));
        }
    }
    out.sort();
    Ok(out)
}

fn reset_dir(corpus: &Corpus, dir: &str) -> Result<()> {
    let path = corpus.path(dir);
    if path.exists() {
        fs::remove_dir_all(&path).map_err(|e| Error::io(&path, e))?;
    }
    fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))
}

fn read_state(corpus: &Corpus) -> Result<BTreeMap<String, StageState>> {
    let path = corpus.path(STATE);
    if path.exists() {
        read_json(&path)
    } else {
        Ok(BTreeMap::new())
    }
}

fn output_hash(corpus: &Corpus, stage: Stage, outputs: &[PathBuf]) -> Result<String> {
    let mut f = Fingerprint::new(stage);
    f.add_files(corpus, outputs)?;
    Ok(f.finish())
}

/// Runs `body` unless the recorded fingerprints show the stage is current.
fn run_stage(
    corpus: &Corpus,
    stage: Stage,
    input: String,
    outputs: impl Fn() -> Result<Vec<PathBuf>>,
    body: impl FnOnce() -> Result<String>,
) -> Result<StageOutcome> {
    let mut state = read_state(corpus)?;
    if let Some(prev) = state.get(stage.name()) {
        if prev.input == input && prev.output == output_hash(corpus, stage, &outputs()?)? {
            info!("{stage}: up to date");
            return Ok(StageOutcome {
                stage,
                skipped: true,
                summary: prev.summary.clone(),
            });
        }
    }
    let summary = body()?;
    info!("{stage}: {summary}");
    let output = output_hash(corpus, stage, &outputs()?)?;
    state.insert(
        stage.name().to_string(),
        StageState {
            input,
            output,
            summary: summary.clone(),
        },
    );
    write_json(&corpus.path(STATE), &state)?;
    Ok(StageOutcome {
        stage,
        skipped: false,
        summary,
    })
}

/// Per-song result of factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExtractRecord {
    song_id: String,
    grid: BarGrid,
    weighted: LoopLayout,
    candidates: Vec<LoopCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DedupRecord {
    song_id: String,
    selection: LoopSelection,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {jobs} workers: {e}")))
}

fn candidate_path(loop_id: &str) -> String {
    format!("audio/candidates/{loop_id}.wav")
}

fn extract_song(corpus: &Corpus, song: &SongRecord, mining: &MiningConfig) -> Result<usize> {
    let clip = corpus.read_audio(&song.audio_path)?;
    let fact = factorize_song(&song.song_id, &clip, song.bpm_hint, mining)?;
    let mut rendered = 0;
    for c in &fact.candidates {
        if c.source_bar.is_some() {
            let audio = fact.render(&clip, c.component)?;
            write_wav(corpus.path(candidate_path(&c.loop_id)), &audio, WavFormat::Float32)?;
            rendered += 1;
        }
    }
    let record = ExtractRecord {
        song_id: song.song_id.clone(),
        grid: fact.grid,
        weighted: fact.weighted,
        candidates: fact.candidates,
    };
    write_json(&corpus.path(format!("work/extract/{}.json", song.song_id)), &record)?;
    Ok(rendered)
}

/// Bar grid, factorization and candidate loop audio for every song.
pub fn run_extract(corpus: &Corpus, config: &PipelineConfig) -> Result<StageOutcome> {
    let mut f = Fingerprint::new(Stage::Extract);
    f.add_files(corpus, &[PathBuf::from(super::SONGS)])?;
    let mining = config.mining();
    f.add_json("mining", &(mining.beats_per_bar, mining.rank, mining.iterations, mining.seed));
    run_stage(
        corpus,
        Stage::Extract,
        f.finish(),
        || dir_files(corpus, "work/extract"),
        || {
            let songs = corpus.songs()?;
            reset_dir(corpus, "work/extract")?;
            reset_dir(corpus, "audio/candidates")?;
            let pool = thread_pool(config.jobs)?;
            let results: Vec<Result<usize>> =
                pool.install(|| songs.par_iter().map(|s| extract_song(corpus, s, &mining)).collect());
            let (mut done, mut candidates) = (0, 0);
            for (song, result) in songs.iter().zip(results) {
                match result {
                    Ok(n) => {
                        done += 1;
                        candidates += n;
                    }
                    Err(e) => warn!("extract: skipping song {}: {e}", song.song_id),
                }
            }
            Ok(format!(
                "{done} of {} songs factorized, {candidates} candidate loops",
                songs.len()
            ))
        },
    )
}

/// Deduplication, loop cap and layout refinement; publishes the loop list.
pub fn run_dedup(corpus: &Corpus, config: &PipelineConfig) -> Result<StageOutcome> {
    let mut f = Fingerprint::new(Stage::Dedup);
    f.add_files(corpus, &dir_files(corpus, "work/extract")?)?;
    f.add_json("max_loops", &config.max_loops_per_song);
    run_stage(
        corpus,
        Stage::Dedup,
        f.finish(),
        || {
            let mut files = dir_files(corpus, "work/dedup")?;
            files.push(PathBuf::from(LOOPS));
            Ok(files)
        },
        || {
            reset_dir(corpus, "work/dedup")?;
            reset_dir(corpus, "audio/loops")?;
            let mut loops = Vec::new();
            let mut songs = 0;
            for file in dir_files(corpus, "work/extract")? {
                let record: ExtractRecord = read_json(&corpus.path(&file))?;
                let selection = match select_loops(&record.candidates, &record.weighted, config.max_loops_per_song) {
                    Ok(s) => s,
                    Err(e) => {
                        warn!("dedup: skipping song {}: {e}", record.song_id);
                        continue;
                    }
                };
                for &k in &selection.kept {
                    let c = &record.candidates[k];
                    let audio_path = format!("audio/loops/{}.wav", c.loop_id);
                    let from = corpus.path(candidate_path(&c.loop_id));
                    let to = corpus.path(&audio_path);
                    fs::copy(&from, &to).map_err(|e| Error::io(&from, e))?;
                    loops.push(LoopRecord {
                        loop_id: c.loop_id.clone(),
                        song_id: record.song_id.clone(),
                        audio_path,
                        duration: LOOP_SECONDS,
                        source_bar: c.source_bar,
                        activation_total: Some(c.activation_total),
                        hash: Some(c.hash),
                        derived_from: None,
                        manipulation: None,
                    });
                }
                write_json(
                    &corpus.path(format!("work/dedup/{}.json", record.song_id)),
                    &DedupRecord {
                        song_id: record.song_id.clone(),
                        selection,
                    },
                )?;
                songs += 1;
            }
            loops.sort_by(|a, b| a.loop_id.cmp(&b.loop_id));
            corpus.write_records(LOOPS, &loops)?;
            Ok(format!("{} loops kept from {songs} songs", loops.len()))
        },
    )
}

/// Positive pairs from the refined layouts.
pub fn run_pairs(corpus: &Corpus, config: &PipelineConfig) -> Result<StageOutcome> {
    let mut f = Fingerprint::new(Stage::Pairs);
    f.add_files(corpus, &dir_files(corpus, "work/dedup")?)?;
    f.add_json("threshold", &config.threshold);
    run_stage(
        corpus,
        Stage::Pairs,
        f.finish(),
        || Ok(vec![PathBuf::from(PAIRS)]),
        || {
            let mut pairs = Vec::new();
            let (mut with, mut without) = (0, 0);
            for file in dir_files(corpus, "work/dedup")? {
                let record: DedupRecord = read_json(&corpus.path(&file))?;
                let song_pairs = selection_pairs(&record.song_id, &record.selection, config.threshold)?;
                if song_pairs.is_empty() {
                    info!("pairs: song {} has no pair above the threshold", record.song_id);
                    without += 1;
                } else {
                    with += 1;
                }
                pairs.extend(song_pairs);
            }
            pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
            corpus.write_records(PAIRS, &pairs)?;
            Ok(format!(
                "{} positive pairs from {with} songs, {without} songs without pairs",
                pairs.len()
            ))
        },
    )
}

/// Song-level train / val / test split of the songs with pairs.
pub fn run_split(corpus: &Corpus, config: &PipelineConfig) -> Result<StageOutcome> {
    let mut f = Fingerprint::new(Stage::Split);
    f.add_files(corpus, &[PathBuf::from(PAIRS)])?;
    f.add_json("split", &(config.test_songs, config.seed));
    run_stage(
        corpus,
        Stage::Split,
        f.finish(),
        || Ok(vec![PathBuf::from(SPLITS)]),
        || {
            let split = split_songs(&corpus.pairs()?, config.test_songs, config.seed)?;
            corpus.write_splits(&split)?;
            Ok(format!(
                "{} train, {} val, {} test songs",
                split.train.len(),
                split.val.len(),
                split.test.len()
            ))
        },
    )
}

fn needs_detector(choice: StrategyChoice) -> bool {
    matches!(choice, StrategyChoice::Equal | StrategyChoice::Single(Strategy::Selected))
}

/// Loops usable by the selected strategy: not pure drum or bass.
pub(crate) fn selected_eligibility(corpus: &Corpus, loops: &[&LoopRecord]) -> Result<BTreeMap<String, bool>> {
    let detector = HeuristicDetector::default();
    loops
        .iter()
        .map(|l| {
            let clip = corpus.loop_audio(l)?;
            Ok((l.loop_id.clone(), !detector.is_pure_drum_or_bass(&l.loop_id, &clip)?))
        })
        .collect()
}

/// Negative pairs for the train and val songs separately (or for all songs
/// before a split), with manipulated loops rendered to disk.
pub fn run_negatives(corpus: &Corpus, config: &PipelineConfig) -> Result<StageOutcome> {
    let mut f = Fingerprint::new(Stage::Negatives);
    f.add_files(corpus, &[PathBuf::from(PAIRS), PathBuf::from(LOOPS), PathBuf::from(SPLITS)])?;
    f.add_json("sampling", &(config.negative_strategy, config.neg_pos_ratio, config.seed));
    run_stage(
        corpus,
        Stage::Negatives,
        f.finish(),
        || Ok(vec![PathBuf::from(NEGATIVES), PathBuf::from(DERIVED)]),
        || {
            let positives = corpus.pairs()?;
            let mined = corpus.mined_loops()?;
            let groups: Vec<BTreeSet<String>> = match corpus.splits()? {
                Some(s) => vec![s.train.into_iter().collect(), s.val.into_iter().collect()],
                None => vec![positives.iter().map(|p| p.song_id.clone()).collect()],
            };
            let by_id: BTreeMap<&str, &LoopRecord> = mined.iter().map(|l| (l.loop_id.as_str(), l)).collect();
            let mut pairs = Vec::new();
            let mut manipulated = BTreeSet::new();
            for (i, songs) in groups.iter().enumerate() {
                let pos: Vec<LoopPair> = positives.iter().filter(|p| songs.contains(&p.song_id)).cloned().collect();
                if pos.is_empty() {
                    continue;
                }
                let members: Vec<&LoopRecord> = mined.iter().filter(|l| songs.contains(&l.song_id)).collect();
                let refs: Vec<LoopRef> = members
                    .iter()
                    .map(|l| LoopRef {
                        loop_id: l.loop_id.clone(),
                        song_id: l.song_id.clone(),
                    })
                    .collect();
                let eligible = if needs_detector(config.negative_strategy) {
                    selected_eligibility(corpus, &members)?
                } else {
                    BTreeMap::new()
                };
                let sampling = SamplingConfig {
                    strategy: config.negative_strategy,
                    seed: config.seed.wrapping_add(i as u64),
                    neg_pos_ratio: config.neg_pos_ratio,
                    beats_per_loop: BEATS_PER_LOOP,
                };
                let set = build_negative_set(&pos, &refs, &sampling, &|r| {
                    eligible.get(&r.loop_id).copied().unwrap_or(false)
                })?;
                pairs.extend(set.pairs);
                manipulated.extend(set.manipulated);
            }
            reset_dir(corpus, "audio/derived")?;
            let mut derived = Vec::with_capacity(manipulated.len());
            for m in &manipulated {
                let source = by_id
                    .get(m.derived_from.as_str())
                    .ok_or_else(|| Error::invalid(format!("manipulated loop {} has no source", m.loop_id)))?;
                let audio = m.manipulation.apply(&corpus.loop_audio(source)?)?;
                let audio_path = format!("audio/derived/{}.wav", m.loop_id);
                write_wav(corpus.path(&audio_path), &audio, WavFormat::Float32)?;
                derived.push(LoopRecord {
                    loop_id: m.loop_id.clone(),
                    song_id: m.song_id.clone(),
                    audio_path,
                    duration: LOOP_SECONDS,
                    source_bar: None,
                    activation_total: None,
                    hash: None,
                    derived_from: Some(m.derived_from.clone()),
                    manipulation: Some(m.manipulation),
                });
            }
            pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
            corpus.write_records(NEGATIVES, &pairs)?;
            corpus.write_records(DERIVED, &derived)?;
            Ok(format!(
                "{} {} negatives, {} manipulated loops",
                pairs.len(),
                config.negative_strategy,
                derived.len()
            ))
        },
    )
}

fn feature_path(loop_id: &str) -> String {
    format!("features/{loop_id}.f64")
}

/// Log-mel maps of every loop.
pub fn run_featurize(corpus: &Corpus, config: &PipelineConfig) -> Result<StageOutcome> {
    let mut f = Fingerprint::new(Stage::Featurize);
    f.add_files(corpus, &[PathBuf::from(LOOPS), PathBuf::from(DERIVED)])?;
    run_stage(
        corpus,
        Stage::Featurize,
        f.finish(),
        || Ok(vec![PathBuf::from(FEATURES)]),
        || {
            let loops = corpus.loops()?;
            reset_dir(corpus, "features")?;
            let pool = thread_pool(config.jobs)?;
            let records = pool.install(|| {
                loops
                    .par_iter()
                    .map(|l| {
                        let map = loop_features(&corpus.loop_audio(l)?)?;
                        let bytes: Vec<u8> = map.iter().flat_map(|v| v.to_le_bytes()).collect();
                        let path = feature_path(&l.loop_id);
                        write_atomic(&corpus.path(&path), &bytes)?;
                        Ok(FeatureRecord {
                            loop_id: l.loop_id.clone(),
                            path,
                            frames: map.nrows(),
                            bins: map.ncols(),
                            mel_norm: MEL_NORM.to_string(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            corpus.write_records(FEATURES, &records)?;
            Ok(format!("{} feature maps", records.len()))
        },
    )
}

/// Every stage in order.
pub fn run_pipeline(corpus: &Corpus, config: &PipelineConfig) -> Result<Vec<StageOutcome>> {
    Ok(vec![
        run_extract(corpus, config)?,
        run_dedup(corpus, config)?,
        run_pairs(corpus, config)?,
        run_split(corpus, config)?,
        run_negatives(corpus, config)?,
        run_featurize(corpus, config)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_parse_and_unknown_keys_are_reported() {
        let mut c = PipelineConfig::default();
        assert!(c.set("rank", "3").unwrap());
        assert!(c.set("strategy", "reverse").unwrap());
        assert!(c.set("max_loops_per_song", "none").unwrap());
        assert_eq!(c.rank, Some(3));
        assert_eq!(c.negative_strategy, StrategyChoice::Single(Strategy::Reverse));
        assert!(!c.set("colour", "blue").unwrap());
        assert!(c.set("ratio", "lots").is_err());
        assert!(c.set("strategy", "original").is_err());
    }

    #[test]
    fn fingerprints_separate_fields() {
        let mut a = Fingerprint::new(Stage::Pairs);
        a.add("x", b"ab");
        a.add("y", b"c");
        let mut b = Fingerprint::new(Stage::Pairs);
        b.add("x", b"a");
        b.add("y", b"bc");
        assert_ne!(a.finish(), b.finish());
    }
}
