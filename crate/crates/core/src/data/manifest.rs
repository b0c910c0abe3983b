//! JSON-lines corpus manifests.
//!
//! One object per line: `{"audio": "path.wav", "speaker": "P000", "text": "...", "sr": 24000}`.
//! `text` is required in paired manifests and forbidden in untranscribed ones.
//! Relative audio paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Paired,
    Untranscribed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub speaker_id: String,
    pub text: Option<String>,
    pub sample_rate: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub kind: CorpusKind,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    audio: String,
    speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    sr: u32,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.speaker_id.as_str()).collect()
    }

    /// Keep only entries whose speaker satisfies `keep`.
    pub fn filter_speakers(&self, keep: impl Fn(&str) -> bool) -> CorpusManifest {
        CorpusManifest {
            kind: self.kind,
            entries: self
                .entries
                .iter()
                .filter(|e| keep(&e.speaker_id))
                .cloned()
                .collect(),
        }
    }

    /// Write as JSON lines; audio paths are written relative to `base` when possible.
    pub fn write(&self, path: &Path, base: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in &self.entries {
            let audio = e
                .audio_path
                .strip_prefix(base)
                .unwrap_or(&e.audio_path)
                .to_string_lossy()
                .into_owned();
            let line = Line {
                audio,
                speaker: e.speaker_id.clone(),
                text: e.text.clone(),
                sr: e.sample_rate,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }
}

/// Load and validate a manifest of the expected `kind`. Entries keep file order.
pub fn load_manifest(path: &Path, kind: CorpusKind) -> Result<CorpusManifest> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let raw = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, text) in raw.lines().enumerate() {
        let line_no = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| schema("expected a JSON object".into()))?;
        let has_text = obj.contains_key("text");
        match kind {
            CorpusKind::Untranscribed if has_text => {
                return Err(schema("`text` is not allowed in an untranscribed manifest".into()))
            }
            CorpusKind::Paired if !has_text => {
                return Err(schema("missing field `text` in a paired manifest".into()))
            }
            _ => {}
        }
        let line: Line = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
        if line.speaker.is_empty() {
            return Err(schema("empty `speaker`".into()));
        }
        if let Some(t) = &line.text {
            if t.trim().is_empty() {
                return Err(schema("empty `text`".into()));
            }
        }
        if line.sr == 0 {
            return Err(schema("`sr` must be positive".into()));
        }
        let audio_path = {
            let p = PathBuf::from(&line.audio);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        if !audio_path.is_file() {
            return Err(Error::MissingFile(audio_path));
        }
        entries.push(ManifestEntry {
            audio_path,
            speaker_id: line.speaker,
            text: line.text,
            sample_rate: line.sr,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyManifest(path.to_path_buf()));
    }
    Ok(CorpusManifest { kind, entries })
}

/// Fails with the sorted list of shared speaker ids, if any.
pub fn assert_disjoint_speakers(paired: &CorpusManifest, untranscribed: &CorpusManifest) -> Result<()> {
    let a = paired.speakers();
    let b = untranscribed.speakers();
    let shared: Vec<String> = a.intersection(&b).map(|s| s.to_string()).collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::SpeakerOverlap(shared))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(kind: CorpusKind, speakers: &[&str]) -> CorpusManifest {
        CorpusManifest {
            kind,
            entries: speakers
                .iter()
                .map(|s| ManifestEntry {
                    audio_path: PathBuf::from("x.wav"),
                    speaker_id: s.to_string(),
                    text: (kind == CorpusKind::Paired).then(|| "a".to_string()),
                    sample_rate: 24_000,
                })
                .collect(),
        }
    }

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"").unwrap();
    }

    #[test]
    fn loads_paired_entries_in_order() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.wav");
        touch(dir.path(), "b.wav");
        let path = dir.path().join("paired.jsonl");
        fs::write(
            &path,
            "{\"audio\":\"a.wav\",\"speaker\":\"P1\",\"text\":\"ab\",\"sr\":24000}\n\
             {\"audio\":\"b.wav\",\"speaker\":\"P2\",\"text\":\"ba\",\"sr\":48000}\n",
        )
        .unwrap();
        let m = load_manifest(&path, CorpusKind::Paired).unwrap();
        assert_eq!(m.kind, CorpusKind::Paired);
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[0].speaker_id, "P1");
        assert_eq!(m.entries[1].sample_rate, 48_000);
        assert_eq!(m.entries[1].audio_path, dir.path().join("b.wav"));
    }

    #[test]
    fn text_in_untranscribed_manifest_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.wav");
        let path = dir.path().join("u.jsonl");
        fs::write(&path, "{\"audio\":\"a.wav\",\"speaker\":\"U1\",\"text\":\"hi\",\"sr\":24000}\n").unwrap();
        assert!(matches!(
            load_manifest(&path, CorpusKind::Untranscribed),
            Err(Error::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn missing_text_missing_field_and_empty_speaker_are_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.wav");
        let path = dir.path().join("p.jsonl");
        for body in [
            "{\"audio\":\"a.wav\",\"speaker\":\"P1\",\"sr\":24000}",
            "{\"audio\":\"a.wav\",\"text\":\"a\",\"sr\":24000}",
            "{\"audio\":\"a.wav\",\"speaker\":\"\",\"text\":\"a\",\"sr\":24000}",
            "[1, 2]",
        ] {
            fs::write(&path, body).unwrap();
            assert!(
                matches!(load_manifest(&path, CorpusKind::Paired), Err(Error::Schema { .. })),
                "{body}"
            );
        }
    }

    #[test]
    fn missing_wav_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        fs::write(&path, "{\"audio\":\"gone.wav\",\"speaker\":\"P1\",\"text\":\"a\",\"sr\":24000}\n").unwrap();
        match load_manifest(&path, CorpusKind::Paired) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("gone.wav")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_is_reported() {
        let r = load_manifest(Path::new("/nonexistent/m.jsonl"), CorpusKind::Paired);
        assert!(matches!(r, Err(Error::MissingFile(_))));
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        fs::write(&path, "\n\n").unwrap();
        assert!(matches!(load_manifest(&path, CorpusKind::Paired), Err(Error::EmptyManifest(_))));
    }

    #[test]
    fn disjointness() {
        let p = manifest(CorpusKind::Paired, &["A", "B"]);
        assert!(assert_disjoint_speakers(&p, &manifest(CorpusKind::Untranscribed, &["C", "D"])).is_ok());
        match assert_disjoint_speakers(&p, &manifest(CorpusKind::Untranscribed, &["B", "C"])) {
            Err(Error::SpeakerOverlap(s)) => assert_eq!(s, vec!["B".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(assert_disjoint_speakers(&p, &manifest(CorpusKind::Untranscribed, &[])).is_ok());
    }

    #[test]
    fn write_then_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "x.wav");
        let mut m = manifest(CorpusKind::Paired, &["A", "B"]);
        for e in &mut m.entries {
            e.audio_path = dir.path().join("x.wav");
        }
        let path = dir.path().join("m.jsonl");
        m.write(&path, dir.path()).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with("{\"audio\":\"x.wav\""));
        assert_eq!(load_manifest(&path, CorpusKind::Paired).unwrap(), m);
    }
}
