use std::fs;
use std::path::Path;
use std::time::Instant;

use loopcompat::audio::wav::{write_wav, WavFormat};
use loopcompat::store::{ingest, run_pipeline, run_pairs, validate, Corpus, PipelineConfig};
use loopcompat::synth;

fn write_songs(dir: &Path, layered: usize) {
    let mut lines = Vec::new();
    for i in 0..layered {
        let name = format!("song{i:02}");
        write_wav(dir.join(format!("{name}.wav")), &synth::layered_song(i as u64), WavFormat::Pcm16).unwrap();
        lines.push(format!(r#"{{"song_id":"{name}","audio_path":"{name}.wav","bpm_hint":120.0}}"#));
    }
    let solo = synth::arrange(&[synth::low_loop()], &[vec![true; 16]]);
    write_wav(dir.join("solo.wav"), &solo, WavFormat::Pcm16).unwrap();
    lines.push(r#"{"song_id":"solo","audio_path":"solo.wav","bpm_hint":120.0}"#.to_string());
    fs::write(dir.join("manifest.jsonl"), lines.join("\n")).unwrap();
}

fn config() -> PipelineConfig {
    PipelineConfig {
        rank: Some(3),
        iterations: 60,
        seed: 4,
        ..PipelineConfig::default()
    }
}

#[test]
fn pipeline_builds_a_consistent_resumable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    write_songs(dir.path(), 10);
    let corpus = Corpus::create(dir.path().join("corpus")).unwrap();
    ingest(&dir.path().join("manifest.jsonl"), &corpus).unwrap();
    let t = Instant::now();
    let outcomes = run_pipeline(&corpus, &config()).unwrap();
    eprintln!("pipeline: {:.1} s", t.elapsed().as_secs_f64());
    assert!(outcomes.iter().all(|o| !o.skipped));
    for o in &outcomes {
        eprintln!("{}: {}", o.stage, o.summary);
    }

    let pairs = corpus.pairs().unwrap();
    for i in 0..10 {
        let song = format!("song{i:02}");
        let n = pairs.iter().filter(|p| p.song_id == song).count();
        assert!((1..=3).contains(&n), "{song}: {n} pairs");
    }
    assert!(pairs.iter().all(|p| p.song_id != "solo"));
    let split = corpus.splits().unwrap().unwrap();
    assert_eq!((split.train.len(), split.val.len()), (8, 2));
    assert!(split.split_of("solo").is_none());
    assert_eq!(validate(&corpus).unwrap(), Vec::<String>::new());

    let again = run_pipeline(&corpus, &config()).unwrap();
    assert!(again.iter().all(|o| o.skipped), "{again:?}");

    // a new threshold reruns pairs only; the unchanged outputs keep later stages current
    let stricter = PipelineConfig {
        threshold: 0.25,
        ..config()
    };
    assert!(!run_pairs(&corpus, &stricter).unwrap().skipped);
    let rest = run_pipeline(&corpus, &stricter).unwrap();
    assert!(rest[0].skipped && rest[1].skipped && rest[2].skipped);

    // tampering with an output forces the stage to run again
    fs::write(corpus.path("pairs.jsonl"), "").unwrap();
    let rerun = run_pipeline(&corpus, &stricter).unwrap();
    assert!(!rerun[2].skipped);
    assert_eq!(validate(&corpus).unwrap(), Vec::<String>::new());
}

#[test]
fn validate_reports_dangling_references() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::create(dir.path()).unwrap();
    fs::write(corpus.path("songs.jsonl"), "").unwrap();
    let pair = r#"{"pair_id":"p","loop_a":"x","loop_b":"y","label":"positive","strategy":"original","song_id":"s"}"#;
    fs::write(corpus.path("pairs.jsonl"), pair).unwrap();
    let problems = validate(&corpus).unwrap();
    assert_eq!(problems.len(), 2, "{problems:?}");
    assert!(problems[0].contains("unknown loop x"));
}
