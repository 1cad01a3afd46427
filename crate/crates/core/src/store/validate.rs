//! Referential integrity of a corpus.

use std::collections::{BTreeMap, BTreeSet};

use super::Corpus;
use crate::audio::{wav, CANONICAL_RATE, LOOP_SAMPLES, LOOP_SECONDS};
use crate::error::Result;
use crate::refine::Label;

/// Problems found, empty for a consistent corpus. Malformed manifests are
/// errors rather than problems.
pub fn validate(corpus: &Corpus) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let songs = corpus.songs()?;
    let mut song_ids = BTreeSet::new();
    for s in &songs {
        if !song_ids.insert(s.song_id.as_str()) {
            problems.push(format!("song {} listed twice", s.song_id));
        }
        if !corpus.path(&s.audio_path).is_file() {
            problems.push(format!("song {}: audio {} missing", s.song_id, s.audio_path));
        }
    }

    let loops = corpus.loops()?;
    let mut by_id = BTreeMap::new();
    for l in &loops {
        if by_id.insert(l.loop_id.as_str(), l).is_some() {
            problems.push(format!("loop {} listed twice", l.loop_id));
        }
        if !song_ids.contains(l.song_id.as_str()) {
            problems.push(format!("loop {}: unknown song {}", l.loop_id, l.song_id));
        }
        if l.duration != LOOP_SECONDS {
            problems.push(format!("loop {}: duration {} s", l.loop_id, l.duration));
        }
        if l.derived_from.is_some() != l.manipulation.is_some() {
            problems.push(format!("loop {}: derived_from and manipulation must come together", l.loop_id));
        }
        match wav::read_wav(corpus.path(&l.audio_path)) {
            Ok(clip) if clip.len() == LOOP_SAMPLES && clip.sample_rate() == CANONICAL_RATE => {}
            Ok(clip) => problems.push(format!(
                "loop {}: {} samples at {} Hz, expected {LOOP_SAMPLES} at {CANONICAL_RATE}",
                l.loop_id,
                clip.len(),
                clip.sample_rate()
            )),
            Err(e) => problems.push(format!("loop {}: {e}", l.loop_id)),
        }
    }
    for l in &loops {
        // follow the provenance chain; revisiting an id means a cycle
        let mut seen = BTreeSet::from([l.loop_id.as_str()]);
        let mut cur = l;
        while let Some(parent) = &cur.derived_from {
            match by_id.get(parent.as_str()) {
                None => {
                    problems.push(format!("loop {}: source {parent} missing", cur.loop_id));
                    break;
                }
                Some(p) if !seen.insert(p.loop_id.as_str()) => {
                    problems.push(format!("loop {}: provenance cycle", l.loop_id));
                    break;
                }
                Some(p) => cur = p,
            }
        }
    }

    let mut pair_ids = BTreeSet::new();
    let positives = corpus.pairs()?;
    let negatives = corpus.negatives()?;
    for (p, expected) in positives
        .iter()
        .map(|p| (p, Label::Positive))
        .chain(negatives.iter().map(|p| (p, Label::Negative)))
    {
        if !pair_ids.insert(p.pair_id.as_str()) {
            problems.push(format!("pair {} listed twice", p.pair_id));
        }
        if p.label != expected {
            problems.push(format!("pair {} has label {:?} in the wrong list", p.pair_id, p.label));
        }
        for id in [&p.loop_a, &p.loop_b] {
            if !by_id.contains_key(id.as_str()) {
                problems.push(format!("pair {}: unknown loop {id}", p.pair_id));
            }
        }
    }

    if let Some(split) = corpus.splits()? {
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (name, list) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            for s in list {
                if !song_ids.contains(s.as_str()) {
                    problems.push(format!("split {name}: unknown song {s}"));
                }
                if let Some(prev) = owner.insert(s, name) {
                    problems.push(format!("song {s} is in both {prev} and {name}"));
                }
            }
        }
        let rest = (split.train.len() + split.val.len()) as f64;
        if (split.val.len() as f64 - rest / 5.0).abs() > 1.0 {
            problems.push(format!(
                "split is {} train / {} val songs, not 4:1",
                split.train.len(),
                split.val.len()
            ));
        }
        let positive_ids: BTreeMap<&str, &str> =
            positives.iter().map(|p| (p.pair_id.as_str(), p.song_id.as_str())).collect();
        for id in &split.test_pairs {
            match positive_ids.get(id.as_str()) {
                Some(song) if owner.get(song) == Some(&"test") => {}
                Some(song) => problems.push(format!("test pair {id} belongs to non-test song {song}")),
                None => problems.push(format!("test pair {id} is not a positive pair")),
            }
        }
    }

    for f in corpus.features()? {
        if !by_id.contains_key(f.loop_id.as_str()) {
            problems.push(format!("features for unknown loop {}", f.loop_id));
        }
        if !corpus.path(&f.path).is_file() {
            problems.push(format!("features {} missing", f.path));
        }
    }
    Ok(problems)
}
