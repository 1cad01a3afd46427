//! Synthetic audio fixtures: gated tones, click tracks, multi-loop songs and
//! clustered loop corpora with known structure.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioClip, CANONICAL_RATE, LOOP_SAMPLES};

/// A repeating pattern of decaying tone hits.
#[derive(Debug, Clone)]
pub struct ToneLoop {
    /// Partial frequencies in Hz.
    pub partials: Vec<f64>,
    /// Hit positions in beats from the start of the bar.
    pub hits: Vec<f64>,
    /// Exponential decay time constant in seconds.
    pub decay: f64,
    pub gain: f64,
}

impl ToneLoop {
    /// Renders `bars` bars at `bpm` with four beats per bar.
    pub fn render(&self, bars: usize, bpm: f64, rate: u32) -> Vec<f32> {
        let beat = 60.0 / bpm;
        let bar_len = (4.0 * beat * rate as f64).round() as usize;
        let mut out = vec![0.0f32; bar_len * bars];
        let norm = self.gain / self.partials.len().max(1) as f64;
        for bar in 0..bars {
            for &hit in &self.hits {
                let start = bar * bar_len + (hit * beat * rate as f64).round() as usize;
                let span = ((6.0 * self.decay).min(beat * 4.0) * rate as f64) as usize;
                for i in 0..span {
                    let idx = start + i;
                    if idx >= out.len() {
                        break;
                    }
                    let t = i as f64 / rate as f64;
                    // short linear attack avoids a broadband click
                    let attack = (t / 0.005).min(1.0);
                    let env = attack * (-t / self.decay).exp();
                    let value: f64 = self
                        .partials
                        .iter()
                        .map(|f| (2.0 * PI * f * t).sin())
                        .sum();
                    out[idx] += (norm * env * value) as f32;
                }
            }
        }
        out
    }

    /// A canonical 2-s loop (one bar at 120 BPM).
    pub fn canonical(&self) -> AudioClip {
        let s = self.render(1, 120.0, CANONICAL_RATE);
        debug_assert_eq!(s.len(), LOOP_SAMPLES);
        AudioClip::new(s, CANONICAL_RATE).expect("finite synthetic audio")
    }
}

/// Low tone on beats one, two and four plus the "and" of three.
pub fn low_loop() -> ToneLoop {
    ToneLoop {
        partials: vec![146.83],
        hits: vec![0.0, 1.0, 2.5, 3.0],
        decay: 0.25,
        gain: 0.45,
    }
}

/// High tones on the downbeat and the off-beats.
pub fn high_loop() -> ToneLoop {
    ToneLoop {
        partials: vec![5274.0, 6272.0],
        hits: vec![0.0, 0.5, 2.0, 3.5],
        decay: 0.12,
        gain: 0.45,
    }
}

/// Click track with clicks every beat, starting at `first` seconds.
pub fn click_track(bpm: f64, secs: f64, first: f64) -> AudioClip {
    let rate = CANONICAL_RATE as f64;
    let mut s = vec![0.0f32; (secs * rate) as usize];
    let mut t = first;
    while t < secs {
        let i = (t * rate).round() as usize;
        for k in 0..64 {
            if let Some(x) = s.get_mut(i + k) {
                *x = if k % 2 == 0 { 0.9 } else { -0.9 } * (1.0 - k as f32 / 64.0);
            }
        }
        t += 60.0 / bpm;
    }
    AudioClip::new(s, CANONICAL_RATE).expect("finite synthetic audio")
}

/// Mixes loops bar by bar: `layout[l][b]` turns loop `l` on in bar `b`.
/// Runs at 120 BPM so every bar lasts exactly two seconds.
pub fn arrange(loops: &[ToneLoop], layout: &[Vec<bool>]) -> AudioClip {
    let bars = layout.first().map_or(0, Vec::len);
    let mut out = vec![0.0f32; LOOP_SAMPLES * bars];
    for (lp, row) in loops.iter().zip(layout) {
        let bar_audio = lp.render(1, 120.0, CANONICAL_RATE);
        for (b, &on) in row.iter().enumerate() {
            if on {
                for (o, s) in out[b * LOOP_SAMPLES..(b + 1) * LOOP_SAMPLES].iter_mut().zip(&bar_audio) {
                    *o += s;
                }
            }
        }
    }
    AudioClip::new(out, CANONICAL_RATE).expect("finite synthetic audio")
}

/// Sixteen bars: the low loop alone for four bars, the high loop alone for
/// four, then both together for eight.
pub fn two_loop_song() -> AudioClip {
    let layout = vec![
        (0..16).map(|b| b < 4 || b >= 8).collect(),
        (0..16).map(|b| b >= 4).collect(),
    ];
    arrange(&[low_loop(), high_loop()], &layout)
}

/// Random tone loop from one of two registers: cluster 0 sits below 400 Hz,
/// cluster 1 above 2 kHz.
pub fn cluster_loop(cluster: usize, rng: &mut impl Rng) -> ToneLoop {
    let (lo, hi) = if cluster == 0 { (80.0, 400.0) } else { (2000.0, 6000.0) };
    let partials = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(lo..hi)).collect();
    let mut hits: Vec<f64> = (0..8).filter(|_| rng.gen_bool(0.5)).map(|h| h as f64 * 0.5).collect();
    if hits.is_empty() {
        hits.push(0.0);
    }
    ToneLoop {
        partials,
        hits,
        decay: rng.gen_range(0.08..0.4),
        gain: rng.gen_range(0.3..0.7),
    }
}

/// `per_cluster` canonical loops for each of the two clusters, interleaved,
/// with their cluster index.
pub fn cluster_corpus(per_cluster: usize, seed: u64) -> Vec<(usize, AudioClip)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..per_cluster * 2)
        .map(|i| {
            let cluster = i % 2;
            (cluster, cluster_loop(cluster, &mut rng).canonical())
        })
        .collect()
}

/// Random tone loop confined to one of three disjoint registers: below
/// 300 Hz, 600 Hz to 1.2 kHz, or above 3 kHz.
pub fn register_loop(register: usize, rng: &mut impl Rng) -> ToneLoop {
    let (lo, hi) = [(80.0, 300.0), (600.0, 1200.0), (3000.0, 6000.0)][register.min(2)];
    let mut l = cluster_loop(0, rng);
    l.partials = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(lo..hi)).collect();
    l
}

/// Sixteen bars of three register loops. Each plays alone for two bars,
/// then low + mid, mid + high and all three together, so every two loops
/// co-occur.
pub fn layered_song(seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loops: Vec<ToneLoop> = (0..3).map(|r| register_loop(r, &mut rng)).collect();
    let on = |bars: &[std::ops::Range<usize>]| -> Vec<bool> {
        (0..16).map(|b| bars.iter().any(|r| r.contains(&b))).collect()
    };
    let layout = vec![on(&[0..2, 6..10, 14..16]), on(&[2..4, 6..16]), on(&[4..6, 10..16])];
    arrange(&loops, &layout)
}

/// Labelled index pairs over a [`cluster_corpus`]: `positives` distinct
/// same-cluster pairs (label 1) and `negatives` distinct cross-cluster pairs
/// (label 0), shuffled.
pub fn cluster_pairs(clusters: &[usize], positives: usize, negatives: usize, seed: u64) -> Vec<(usize, usize, f64)> {
    let mut same = Vec::new();
    let mut cross = Vec::new();
    for i in 0..clusters.len() {
        for j in i + 1..clusters.len() {
            if clusters[i] == clusters[j] {
                same.push((i, j, 1.0));
            } else {
                cross.push((i, j, 0.0));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    same.shuffle(&mut rng);
    cross.shuffle(&mut rng);
    assert!(same.len() >= positives && cross.len() >= negatives, "corpus too small for the requested pairs");
    let mut pairs: Vec<_> = same.into_iter().take(positives).chain(cross.into_iter().take(negatives)).collect();
    pairs.shuffle(&mut rng);
    pairs
}
