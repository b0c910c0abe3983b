//! Deterministic synthetic multi-speaker corpus.
//!
//! A speaker is a harmonic template: a base pitch, a vocal-tract scale that
//! shifts three resonances, and a gain per resonance. An utterance is a string
//! over `a..h`; each letter becomes one segment whose pitch ratio and voicing
//! depend on the letter, shaped by the speaker's resonances. Paired speakers
//! are named `P###`, untranscribed speakers `U###`.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_wav, Alphabet, CorpusKind, CorpusManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::spectral::SAMPLE_RATE;

pub const SYMBOLS: [char; 8] = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'];
const PITCH_RATIO: [f64; 8] = [0.9, 0.95, 1.0, 1.05, 1.1, 1.15, 1.0, 0.95];
/// Letters at or after this index are rendered as breathy (noise-dominated) segments.
const FIRST_BREATHY: usize = 6;
const FORMANTS_HZ: [f64; 3] = [550.0, 1500.0, 2600.0];
const BANDWIDTH_HZ: [f64; 3] = [120.0, 180.0, 260.0];
const MAX_PARTIAL_HZ: f64 = 7000.0;
const FADE_S: f64 = 0.006;
const PEAK: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub n_paired_speakers: usize,
    pub n_untranscribed_speakers: usize,
    pub utterances_per_speaker: usize,
    pub seed: u64,
    /// Length of every utterance in seconds.
    pub duration_s: f64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            n_paired_speakers: 8,
            n_untranscribed_speakers: 24,
            utterances_per_speaker: 20,
            seed: 0,
            duration_s: 1.0,
        }
    }
}

impl SyntheticCorpusSpec {
    fn validate(&self) -> Result<()> {
        if self.n_paired_speakers == 0 || self.n_untranscribed_speakers == 0 || self.utterances_per_speaker == 0 {
            return Err(Error::Config("synthetic corpus counts must be positive".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.1) {
            return Err(Error::Config("synthetic utterance duration must be at least 0.1 s".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerTemplate {
    pub f0_hz: f64,
    pub tract_scale: f64,
    pub gains: [f64; 3],
}

impl SpeakerTemplate {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        SpeakerTemplate {
            f0_hz: rng.random_range(80.0..300.0),
            tract_scale: rng.random_range(0.75..1.35),
            gains: [
                rng.random_range(0.05..1.0),
                rng.random_range(0.05..1.0),
                rng.random_range(0.05..1.0),
            ],
        }
    }

    /// Spectral envelope: resonance peaks over a small floor with a gentle tilt.
    pub fn envelope(&self, hz: f64) -> f64 {
        let mut e = 0.03;
        for k in 0..3 {
            let c = FORMANTS_HZ[k] * self.tract_scale;
            let d = (hz - c) / BANDWIDTH_HZ[k];
            e += self.gains[k] / (1.0 + d * d);
        }
        e / (1.0 + hz / 3000.0)
    }
}

/// Render `text` (letters `a..h`) in the voice of `speaker`, `samples` long.
pub fn render<R: Rng + ?Sized>(speaker: &SpeakerTemplate, text: &str, samples: usize, rng: &mut R) -> Vec<f32> {
    let letters: Vec<usize> = text
        .chars()
        .filter_map(|c| SYMBOLS.iter().position(|&s| s == c))
        .collect();
    let mut out = vec![0.0f64; samples];
    if letters.is_empty() || samples == 0 {
        return vec![0.0; samples];
    }
    let weights: Vec<f64> = letters.iter().map(|_| rng.random_range(0.7..1.3)).collect();
    let total: f64 = weights.iter().sum();
    let sr = SAMPLE_RATE as f64;
    let fade = (FADE_S * sr) as usize;
    let mut start = 0usize;
    let mut acc = 0.0;
    for (i, (&letter, w)) in letters.iter().zip(&weights).enumerate() {
        acc += w;
        let end = if i + 1 == letters.len() {
            samples
        } else {
            ((acc / total) * samples as f64).round() as usize
        };
        let len = end.saturating_sub(start);
        if len == 0 {
            continue;
        }
        let f0 = speaker.f0_hz * PITCH_RATIO[letter];
        let breathy = letter >= FIRST_BREATHY;
        // Partials: harmonics of f0 when voiced, a dense inharmonic comb when breathy.
        let step = if breathy { 60.0 } else { f0 };
        let mut partials = Vec::new();
        let mut f = step;
        while f < MAX_PARTIAL_HZ {
            let jitter = if breathy { rng.random_range(-25.0..25.0) } else { 0.0 };
            let amp = speaker.envelope(f) * if breathy { rng.random_range(0.3..0.8) } else { 1.0 };
            partials.push((f + jitter, amp, rng.random_range(0.0..TAU)));
            f += step;
        }
        for (freq, amp, phase) in partials {
            // Phasor recurrence avoids a sin() per sample per partial.
            let (ds, dc) = (TAU * freq / sr).sin_cos();
            let (mut s, mut c) = phase.sin_cos();
            for v in &mut out[start..end] {
                *v += amp * s;
                let ns = s * dc + c * ds;
                c = c * dc - s * ds;
                s = ns;
            }
        }
        for j in 0..len.min(fade) {
            let g = j as f64 / fade as f64;
            out[start + j] *= g;
            out[end - 1 - j] *= g;
        }
        start = end;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { PEAK / peak } else { 0.0 };
    out.into_iter().map(|v| (v * scale) as f32).collect()
}

/// Paths written by [`make_corpus`].
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub paired_manifest: PathBuf,
    pub untranscribed_manifest: PathBuf,
    pub alphabet: PathBuf,
}

pub fn alphabet() -> Alphabet {
    Alphabet::new(SYMBOLS.to_vec()).expect("fixed alphabet is valid")
}

pub fn speaker_templates(spec: &SyntheticCorpusSpec) -> (Vec<SpeakerTemplate>, Vec<SpeakerTemplate>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let paired = (0..spec.n_paired_speakers).map(|_| SpeakerTemplate::sample(&mut rng)).collect();
    let untranscribed = (0..spec.n_untranscribed_speakers)
        .map(|_| SpeakerTemplate::sample(&mut rng))
        .collect();
    (paired, untranscribed)
}

pub fn random_text<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = rng.random_range(5..=9);
    (0..n).map(|_| SYMBOLS[rng.random_range(0..SYMBOLS.len())]).collect()
}

/// Write WAVs, `paired.jsonl`, `untranscribed.jsonl` and `alphabet.txt` under `out_dir`.
pub fn make_corpus(spec: &SyntheticCorpusSpec, out_dir: &Path) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let wav_dir = out_dir.join("wavs");
    fs::create_dir_all(&wav_dir)?;
    let (paired, untranscribed) = speaker_templates(spec);
    let samples = (spec.duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9E37_79B9_7F4A_7C15);

    let mut build = |kind: CorpusKind, prefix: char, templates: &[SpeakerTemplate]| -> Result<CorpusManifest> {
        let mut entries = Vec::new();
        for (si, tpl) in templates.iter().enumerate() {
            let speaker = format!("{prefix}{si:03}");
            for u in 0..spec.utterances_per_speaker {
                let text = random_text(&mut rng);
                let wave = render(tpl, &text, samples, &mut rng);
                let path = wav_dir.join(format!("{speaker}_{u:03}.wav"));
                write_wav(&path, &wave, SAMPLE_RATE)?;
                entries.push(ManifestEntry {
                    audio_path: path,
                    speaker_id: speaker.clone(),
                    text: (kind == CorpusKind::Paired).then_some(text),
                    sample_rate: SAMPLE_RATE,
                });
            }
        }
        Ok(CorpusManifest { kind, entries })
    };
    let paired = build(CorpusKind::Paired, 'P', &paired)?;
    let untranscribed = build(CorpusKind::Untranscribed, 'U', &untranscribed)?;

    let corpus = SyntheticCorpus {
        paired_manifest: out_dir.join("paired.jsonl"),
        untranscribed_manifest: out_dir.join("untranscribed.jsonl"),
        alphabet: out_dir.join("alphabet.txt"),
    };
    paired.write(&corpus.paired_manifest, out_dir)?;
    untranscribed.write(&corpus.untranscribed_manifest, out_dir)?;
    fs::write(&corpus.alphabet, alphabet().to_file_contents())?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_bounded_and_deterministic() {
        let tpl = SpeakerTemplate::sample(&mut ChaCha8Rng::seed_from_u64(1));
        let a = render(&tpl, "abgh", 6000, &mut ChaCha8Rng::seed_from_u64(2));
        let b = render(&tpl, "abgh", 6000, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_eq!(a.len(), 6000);
        let peak = a.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-6);
    }

    #[test]
    fn envelope_peaks_near_scaled_resonances() {
        let tpl = SpeakerTemplate {
            f0_hz: 100.0,
            tract_scale: 1.1,
            gains: [1.0, 0.1, 0.1],
        };
        let peak = (100..3000)
            .map(|f| f as f64)
            .max_by(|a, b| tpl.envelope(*a).total_cmp(&tpl.envelope(*b)))
            .unwrap();
        assert!((peak - 550.0 * 1.1).abs() < 40.0, "{peak}");
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = SyntheticCorpusSpec {
            n_paired_speakers: 0,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(make_corpus(&spec, dir.path()), Err(Error::Config(_))));
    }
}
