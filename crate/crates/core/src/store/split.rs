//! Song-level dataset split. Optional test songs are drawn first and keep a
//! single pair each; the remaining songs divide 4:1 into train and val.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SplitAssignment;
use crate::error::{Error, Result};
use crate::refine::LoopPair;

/// Songs needed in train and val together.
pub const MIN_SPLIT_SONGS: usize = 5;

/// Splits the songs that have positive pairs.
pub fn split_songs(positives: &[LoopPair], test_songs: usize, seed: u64) -> Result<SplitAssignment> {
    let mut by_song: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in positives {
        by_song.entry(p.song_id.as_str()).or_default().push(p.pair_id.as_str());
    }
    if by_song.len() < MIN_SPLIT_SONGS + test_songs {
        return Err(Error::InsufficientData(format!(
            "{} songs with pairs; a split needs {} ({} test)",
            by_song.len(),
            MIN_SPLIT_SONGS + test_songs,
            test_songs
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(13);
    let mut songs: Vec<&str> = by_song.keys().copied().collect();
    songs.shuffle(&mut rng);

    let mut test_pairs = Vec::with_capacity(test_songs);
    for song in &songs[..test_songs] {
        let mut ids = by_song[song].clone();
        ids.sort_unstable();
        test_pairs.push(ids.choose(&mut rng).expect("songs here have pairs").to_string());
    }
    let rest = &songs[test_songs..];
    let val_count = ((rest.len() as f64) / 5.0).round().max(1.0) as usize;
    let sorted = |s: &[&str]| {
        let mut v: Vec<String> = s.iter().map(|x| x.to_string()).collect();
        v.sort();
        v
    };
    test_pairs.sort();
    Ok(SplitAssignment {
        seed,
        train: sorted(&rest[val_count..]),
        val: sorted(&rest[..val_count]),
        test: sorted(&songs[..test_songs]),
        test_pairs,
    })
}
