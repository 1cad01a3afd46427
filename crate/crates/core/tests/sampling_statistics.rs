//! Goodness-of-fit checks on the seeded samplers. Critical values are the
//! upper 1 % points of the chi-square distribution.

use std::collections::BTreeMap;

use loopcompat::negatives::{non_identity_permutations, permutation_for_seed, rearrange_loop, sample_random, LoopRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CHI2_DF4_P01: f64 = 13.2767;
const CHI2_DF22_P01: f64 = 40.2894;

fn chi_square(observed: &[usize], expected: f64) -> f64 {
    observed.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn random_pairs_cover_equal_songs_evenly() {
    let corpus: Vec<LoopRef> = (0..5)
        .flat_map(|s| {
            (0..4).map(move |l| LoopRef {
                loop_id: format!("s{s}-l{l}"),
                song_id: format!("s{s}"),
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut appearances: BTreeMap<String, usize> = BTreeMap::new();
    let draws = 10_000;
    for _ in 0..draws {
        let p = sample_random(&corpus, &mut rng).unwrap();
        let song_b = p.song_b.clone().unwrap();
        assert_ne!(p.song_id, song_b);
        *appearances.entry(p.song_id).or_default() += 1;
        *appearances.entry(song_b).or_default() += 1;
    }
    let counts: Vec<usize> = appearances.values().copied().collect();
    assert_eq!(counts.len(), 5);
    for &c in &counts {
        let share = c as f64 / draws as f64;
        assert!((share - 0.4).abs() < 0.03, "song share {share}");
    }
    let stat = chi_square(&counts, 0.4 * draws as f64);
    assert!(stat < CHI2_DF4_P01, "chi-square {stat}");
}

#[test]
fn rearrangements_are_uniform_over_23_orders() {
    let mut counts = vec![0usize; 23];
    for seed in 0..23_000u64 {
        counts[permutation_for_seed(seed)] += 1;
    }
    let stat = chi_square(&counts, 1000.0);
    assert!(stat < CHI2_DF22_P01, "chi-square {stat}");
}

#[test]
fn seeded_rearrange_uses_the_seeded_order() {
    let clip = loopcompat::synth::low_loop().canonical();
    let perms = non_identity_permutations();
    for seed in [0u64, 7, 99] {
        let (_, order) = rearrange_loop(&clip, seed).unwrap();
        assert_eq!(order, perms[permutation_for_seed(seed)]);
    }
}
