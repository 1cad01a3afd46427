//! Song ingestion: every listed file is decoded, downmixed, resampled to
//! 44.1 kHz and stored as a float WAV inside the corpus.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_id, read_bytes, read_jsonl, sha256_hex, Corpus, SongRecord, SONGS};
use crate::audio::wav::{read_wav, write_wav, WavFormat};
use crate::audio::{resample, CANONICAL_RATE};
use crate::error::{Error, Result};

/// One line of an ingest manifest. Relative audio paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestEntry {
    pub song_id: String,
    pub audio_path: String,
    #[serde(default)]
    pub bpm_hint: Option<f64>,
    #[serde(default)]
    pub license_tag: Option<String>,
}

/// Ingests every song in `manifest` into `corpus`, replacing its song list.
pub fn ingest(manifest: &Path, corpus: &Corpus) -> Result<Vec<SongRecord>> {
    if !manifest.is_file() {
        return Err(Error::Ingest {
            path: manifest.to_path_buf(),
            reason: "manifest not found".into(),
        });
    }
    let entries: Vec<IngestEntry> = read_jsonl(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(entries.len());
    for entry in &entries {
        check_id(&entry.song_id)?;
        if !seen.insert(entry.song_id.clone()) {
            return Err(Error::invalid(format!("song id {} listed twice", entry.song_id)));
        }
        if let Some(bpm) = entry.bpm_hint {
            if !(bpm.is_finite() && bpm > 0.0) {
                return Err(Error::invalid(format!("song {}: bpm hint {bpm} must be positive", entry.song_id)));
            }
        }
        let source = base.join(&entry.audio_path);
        let fail = |reason: String| Error::Ingest {
            path: source.clone(),
            reason,
        };
        if !source.is_file() {
            return Err(fail("file not found".into()));
        }
        let clip = read_wav(&source).map_err(|e| fail(e.to_string()))?;
        if clip.is_empty() {
            return Err(fail("no samples".into()));
        }
        let clip = if clip.sample_rate() == CANONICAL_RATE {
            clip
        } else {
            resample(&clip, CANONICAL_RATE).map_err(|e| fail(e.to_string()))?
        };
        let audio_path = format!("audio/songs/{}.wav", entry.song_id);
        let target = corpus.path(&audio_path);
        if let Some(dir) = target.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_wav(&target, &clip, WavFormat::Float32)?;
        records.push(SongRecord {
            song_id: entry.song_id.clone(),
            audio_path,
            source_path: entry.audio_path.clone(),
            bpm_hint: entry.bpm_hint,
            license_tag: entry.license_tag.clone(),
            content_hash: sha256_hex(&read_bytes(&target)?),
        });
    }
    records.sort_by(|a, b| a.song_id.cmp(&b.song_id));
    corpus.write_records(SONGS, &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;

    fn manifest(dir: &Path, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.join("manifest.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn empty_manifest_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::create(dir.path().join("c")).unwrap();
        let songs = ingest(&manifest(dir.path(), &[]), &corpus).unwrap();
        assert!(songs.is_empty());
        assert!(Corpus::open(corpus.root()).unwrap().songs().unwrap().is_empty());
    }

    #[test]
    fn stereo_48k_is_stored_mono_44100() {
        let dir = tempfile::tempdir().unwrap();
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 48_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let src = dir.path().join("s.wav");
        let mut w = hound::WavWriter::create(&src, spec).unwrap();
        for i in 0..48_000 {
            let v = ((i as f64 * 0.05).sin() * 8000.0) as i16;
            w.write_sample(v).unwrap();
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let before = std::fs::read(&src).unwrap();
        let corpus = Corpus::create(dir.path().join("c")).unwrap();
        let m = manifest(dir.path(), &[r#"{"song_id":"s1","audio_path":"s.wav","license_tag":"CC-BY"}"#]);
        let songs = ingest(&m, &corpus).unwrap();
        let stored = corpus.read_audio(&songs[0].audio_path).unwrap();
        let reader = hound::WavReader::open(corpus.path(&songs[0].audio_path)).unwrap();
        assert_eq!(reader.spec().channels, 1);
        assert_eq!(stored.sample_rate(), 44_100);
        assert!((stored.len() as i64 - 44_100).abs() <= 1);
        assert_eq!(songs[0].license_tag.as_deref(), Some("CC-BY"));
        assert_eq!(std::fs::read(&src).unwrap(), before);
    }

    #[test]
    fn corrupt_and_missing_files_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad.wav"), b"RIFF not really").unwrap();
        let corpus = Corpus::create(dir.path().join("c")).unwrap();
        for file in ["bad.wav", "gone.wav"] {
            let line = format!(r#"{{"song_id":"x","audio_path":"{file}"}}"#);
            let err = ingest(&manifest(dir.path(), &[&line]), &corpus).unwrap_err();
            match err {
                Error::Ingest { path, .. } => assert!(path.ends_with(file)),
                other => panic!("{other}"),
            }
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let clip = AudioClip::silence(100, 44_100).unwrap();
        write_wav(dir.path().join("a.wav"), &clip, WavFormat::Pcm16).unwrap();
        let corpus = Corpus::create(dir.path().join("c")).unwrap();
        let line = r#"{"song_id":"a","audio_path":"a.wav"}"#;
        assert!(matches!(ingest(&manifest(dir.path(), &[line, line]), &corpus), Err(Error::InvalidInput(_))));
    }
}
