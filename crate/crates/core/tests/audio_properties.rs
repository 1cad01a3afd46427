use loopcompat::audio::{
    logmel, resample, stft, stft_complex, time_stretch, window, AudioClip, WindowKind, N_MELS,
};
use proptest::prelude::*;

fn clip_from(seed: u64, len: usize) -> AudioClip {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..len).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    AudioClip::new(samples, 44_100).unwrap()
}

// Energy of the windowed, reflect-padded frames computed sample by sample.
fn framed_energy(clip: &AudioClip, n: usize, hop: usize) -> f64 {
    let s = clip.samples();
    let len = s.len() as isize;
    let w = window(WindowKind::Hamming, n);
    let frames = s.len() / hop + 1;
    let mut total = 0.0;
    for t in 0..frames {
        for (i, wi) in w.iter().enumerate() {
            let mut j = (t * hop) as isize - (n / 2) as isize + i as isize;
            while j < 0 || j >= len {
                j = if j < 0 { -j } else { 2 * (len - 1) - j };
            }
            let x = s[j as usize] as f64 * wi;
            total += x * x;
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn two_second_clips_give_173_by_128(seed: u64) {
        let clip = clip_from(seed, 88_200);
        let mel = logmel(&stft(&clip, 2048, 512).unwrap(), N_MELS).unwrap();
        prop_assert_eq!(mel.values.dim(), (173, 128));
        prop_assert!(mel.values.iter().all(|&v| v >= mel.floor_db));
    }

    #[test]
    fn stft_energy_matches_windowed_signal(seed: u64, len in 3000usize..9000) {
        let clip = clip_from(seed, len);
        let n = 2048;
        let spec = stft_complex(&clip, n, 512, WindowKind::Hamming).unwrap();
        let mut spectral = 0.0;
        for row in spec.values.rows() {
            for (k, v) in row.iter().enumerate() {
                let weight = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                spectral += weight * v.norm_sqr();
            }
        }
        let direct = framed_energy(&clip, n, 512);
        prop_assert!((spectral / n as f64 - direct).abs() <= 0.01 * direct);
    }

    #[test]
    fn stretching_there_and_back_restores_length(seed: u64, ms in 300u32..4000) {
        let clip = clip_from(seed, (ms as usize) * 441 / 10);
        let d = clip.duration();
        let long = time_stretch(&clip, 2.0 * d).unwrap();
        let back = time_stretch(&long, d).unwrap();
        prop_assert!((back.len() as i64 - clip.len() as i64).abs() <= 2);
    }
}

#[test]
fn dsp_is_pure() {
    let clip = clip_from(4, 30_000);
    assert_eq!(stft(&clip, 2048, 512).unwrap(), stft(&clip, 2048, 512).unwrap());
    let spec = stft(&clip, 2048, 512).unwrap();
    assert_eq!(logmel(&spec, N_MELS).unwrap(), logmel(&spec, N_MELS).unwrap());
    assert_eq!(resample(&clip, 48_000).unwrap(), resample(&clip, 48_000).unwrap());
    assert_eq!(time_stretch(&clip, 1.0).unwrap(), time_stretch(&clip, 1.0).unwrap());
}
