use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioClip, CANONICAL_RATE, LOOP_SAMPLES};
use crate::error::{Error, Result};

/// Beats in a canonical loop.
pub const BEATS_PER_LOOP: usize = 4;
/// One beat of a canonical loop: 0.5 s at 44.1 kHz.
pub const BEAT_SAMPLES: usize = LOOP_SAMPLES / BEATS_PER_LOOP;

/// The 23 orderings of four beats other than the identity, lexicographic.
pub fn non_identity_permutations() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(23);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    let distinct = (0..4).all(|i| (i + 1..4).all(|j| p[i] != p[j]));
                    if distinct && p != [0, 1, 2, 3] {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

fn require_canonical(clip: &AudioClip) -> Result<()> {
    if clip.is_canonical_loop() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "expected a {LOOP_SAMPLES}-sample loop at {CANONICAL_RATE} Hz, got {} samples at {} Hz",
            clip.len(),
            clip.sample_rate()
        )))
    }
}

/// Plays the loop backwards.
pub fn reverse_loop(clip: &AudioClip) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(Error::invalid("cannot reverse an empty clip"));
    }
    let mut samples = clip.samples().to_vec();
    samples.reverse();
    Ok(clip.with_samples(samples))
}

/// Shift in beats drawn uniformly from {1, 2, 3}.
pub fn shift_for_seed(seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).gen_range(1..BEATS_PER_LOOP)
}

/// Rotates the loop right by `k` beats, drawing `k` from `seed` when absent.
/// Returns the shifted clip and the shift used.
pub fn shift_loop(clip: &AudioClip, k: Option<usize>, seed: u64) -> Result<(AudioClip, usize)> {
    require_canonical(clip)?;
    let k = k.unwrap_or_else(|| shift_for_seed(seed));
    if !(1..BEATS_PER_LOOP).contains(&k) {
        return Err(Error::invalid(format!("shift of {k} beats outside 1..=3")));
    }
    let mut samples = clip.samples().to_vec();
    samples.rotate_right(k * BEAT_SAMPLES);
    Ok((clip.with_samples(samples), k))
}

/// Index into [`non_identity_permutations`] drawn uniformly from `seed`.
pub fn permutation_for_seed(seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).gen_range(0..23)
}

/// Output beat `i` is input beat `perm[i]`.
pub fn apply_permutation(clip: &AudioClip, perm: [usize; 4]) -> Result<AudioClip> {
    require_canonical(clip)?;
    let src = clip.samples();
    let mut samples = Vec::with_capacity(LOOP_SAMPLES);
    for &b in &perm {
        if b >= BEATS_PER_LOOP {
            return Err(Error::invalid(format!("beat {b} out of range")));
        }
        samples.extend_from_slice(&src[b * BEAT_SAMPLES..(b + 1) * BEAT_SAMPLES]);
    }
    Ok(clip.with_samples(samples))
}

/// Reorders the four beats with a non-identity permutation drawn from
/// `seed`. Returns the clip and the permutation applied.
pub fn rearrange_loop(clip: &AudioClip, seed: u64) -> Result<(AudioClip, [usize; 4])> {
    let perm = non_identity_permutations()[permutation_for_seed(seed)];
    Ok((apply_permutation(clip, perm)?, perm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(at: usize) -> AudioClip {
        let mut s = vec![0.0f32; LOOP_SAMPLES];
        s[at] = 1.0;
        AudioClip::new(s, CANONICAL_RATE).unwrap()
    }

    fn ramp() -> AudioClip {
        let s = (0..LOOP_SAMPLES).map(|i| i as f32 / LOOP_SAMPLES as f32).collect();
        AudioClip::new(s, CANONICAL_RATE).unwrap()
    }

    #[test]
    fn there_are_23_distinct_non_identity_orders() {
        let perms = non_identity_permutations();
        assert_eq!(perms.len(), 23);
        let set: std::collections::BTreeSet<_> = perms.iter().collect();
        assert_eq!(set.len(), 23);
        assert!(!perms.contains(&[0, 1, 2, 3]));
    }

    #[test]
    fn reverse_moves_impulse_to_end() {
        let r = reverse_loop(&impulse(0)).unwrap();
        assert_eq!(r.samples()[LOOP_SAMPLES - 1], 1.0);
        assert_eq!(reverse_loop(&r).unwrap(), impulse(0));
        assert!(reverse_loop(&AudioClip::new(vec![], 44_100).unwrap()).is_err());
    }

    #[test]
    fn one_beat_shift_moves_impulse_by_22050() {
        let (s, k) = shift_loop(&impulse(0), Some(1), 0).unwrap();
        assert_eq!(k, 1);
        assert_eq!(s.samples()[22_050], 1.0);
        let (back, _) = shift_loop(&s, Some(3), 0).unwrap();
        assert_eq!(back, impulse(0));
    }

    #[test]
    fn seeded_shift_is_between_one_and_three() {
        for seed in 0..50 {
            let (_, k) = shift_loop(&ramp(), None, seed).unwrap();
            assert!((1..=3).contains(&k));
            assert_eq!(k, shift_for_seed(seed));
        }
    }

    #[test]
    fn manipulations_need_canonical_loops() {
        let short = AudioClip::silence(1000, CANONICAL_RATE).unwrap();
        assert!(matches!(shift_loop(&short, Some(1), 0), Err(Error::InvalidInput(_))));
        assert!(matches!(rearrange_loop(&short, 0), Err(Error::InvalidInput(_))));
        assert!(shift_loop(&ramp(), Some(4), 0).is_err());
    }

    #[test]
    fn rearrange_reorders_whole_beats() {
        let clip = ramp();
        for seed in 0..40 {
            let (out, perm) = rearrange_loop(&clip, seed).unwrap();
            assert_ne!(out, clip);
            for (i, &b) in perm.iter().enumerate() {
                assert_eq!(
                    &out.samples()[i * BEAT_SAMPLES..(i + 1) * BEAT_SAMPLES],
                    &clip.samples()[b * BEAT_SAMPLES..(b + 1) * BEAT_SAMPLES]
                );
            }
        }
    }
}
