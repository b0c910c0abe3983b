//! Episode sampling: one paired (support) utterance and one untranscribed
//! (query) utterance per draw, uniform and independent.

use rand::Rng;

use crate::data::audio::{read_wav, resample};
use crate::data::manifest::{CorpusKind, CorpusManifest};
use crate::data::tokenizer::Alphabet;
use crate::error::{Error, Result};
use crate::spectral::SAMPLE_RATE;

/// A manifest with its audio decoded at 24 kHz and (for paired corpora) tokenized text.
#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub manifest: CorpusManifest,
    pub waves: Vec<Vec<f32>>,
    pub tokens: Vec<Option<Vec<u32>>>,
}

impl LoadedCorpus {
    pub fn load(manifest: CorpusManifest, alphabet: &Alphabet) -> Result<Self> {
        let mut waves = Vec::with_capacity(manifest.len());
        let mut tokens = Vec::with_capacity(manifest.len());
        for (i, entry) in manifest.entries.iter().enumerate() {
            let (samples, sr) = read_wav(&entry.audio_path)?;
            if sr != entry.sample_rate {
                return Err(Error::Schema {
                    line: i + 1,
                    message: format!(
                        "{} declares {} Hz but the file is {} Hz",
                        entry.audio_path.display(),
                        entry.sample_rate,
                        sr
                    ),
                });
            }
            if samples.is_empty() {
                return Err(Error::EmptyWaveform);
            }
            waves.push(resample(&samples, sr, SAMPLE_RATE)?);
            tokens.push(match &entry.text {
                Some(t) => Some(alphabet.tokenize(t)?),
                None => None,
            });
        }
        Ok(LoadedCorpus {
            manifest,
            waves,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }

    pub fn speaker(&self, index: usize) -> &str {
        &self.manifest.entries[index].speaker_id
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTuple {
    /// Token ids of the support text (`x^t`).
    pub tokens: Vec<u32>,
    /// Support waveform from the paired corpus (`y^t_s`), 24 kHz.
    pub support_wave: Vec<f32>,
    /// Query waveform from the untranscribed corpus (`y^u_q`), 24 kHz.
    pub query_wave: Vec<f32>,
    pub support_speaker: String,
    pub query_speaker: String,
    pub support_index: usize,
    pub query_index: usize,
}

/// Uniform independent draw of (support index, query index).
pub fn draw_indices<R: Rng + ?Sized>(rng: &mut R, n_paired: usize, n_untranscribed: usize) -> Result<(usize, usize)> {
    if n_paired == 0 || n_untranscribed == 0 {
        return Err(Error::EmptyCorpus);
    }
    let s = rng.random_range(0..n_paired);
    let q = rng.random_range(0..n_untranscribed);
    Ok((s, q))
}

pub fn sample_episode<R: Rng + ?Sized>(
    rng: &mut R,
    paired: &LoadedCorpus,
    untranscribed: &LoadedCorpus,
) -> Result<EpisodeTuple> {
    debug_assert_eq!(paired.manifest.kind, CorpusKind::Paired);
    debug_assert_eq!(untranscribed.manifest.kind, CorpusKind::Untranscribed);
    let (s, q) = draw_indices(rng, paired.len(), untranscribed.len())?;
    let tokens = paired.tokens[s].clone().ok_or(Error::Schema {
        line: s + 1,
        message: "support entry has no text".into(),
    })?;
    Ok(EpisodeTuple {
        tokens,
        support_wave: paired.waves[s].clone(),
        query_wave: untranscribed.waves[q].clone(),
        support_speaker: paired.speaker(s).to_string(),
        query_speaker: untranscribed.speaker(q).to_string(),
        support_index: s,
        query_index: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::ManifestEntry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    fn corpus(kind: CorpusKind, prefix: &str, n: usize) -> LoadedCorpus {
        let entries = (0..n)
            .map(|i| ManifestEntry {
                audio_path: PathBuf::from(format!("{prefix}{i}.wav")),
                speaker_id: format!("{prefix}{i:03}"),
                text: (kind == CorpusKind::Paired).then(|| "ab".into()),
                sample_rate: 24_000,
            })
            .collect();
        LoadedCorpus {
            manifest: CorpusManifest { kind, entries },
            waves: (0..n).map(|i| vec![i as f32; 10 + i]).collect(),
            tokens: (0..n)
                .map(|i| (kind == CorpusKind::Paired).then(|| vec![1, i as u32 + 1]))
                .collect(),
        }
    }

    #[test]
    fn same_seed_same_episode() {
        let p = corpus(CorpusKind::Paired, "P", 3);
        let u = corpus(CorpusKind::Untranscribed, "U", 5);
        let a = sample_episode(&mut ChaCha8Rng::seed_from_u64(0), &p, &u).unwrap();
        let b = sample_episode(&mut ChaCha8Rng::seed_from_u64(0), &p, &u).unwrap();
        assert_eq!(a, b);
        assert!(a.support_speaker.starts_with('P') && a.query_speaker.starts_with('U'));
        assert_ne!(a.support_speaker, a.query_speaker);
    }

    #[test]
    fn singleton_corpora_always_give_the_same_tuple() {
        let p = corpus(CorpusKind::Paired, "P", 1);
        let u = corpus(CorpusKind::Untranscribed, "U", 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let e = sample_episode(&mut rng, &p, &u).unwrap();
            assert_eq!((e.support_index, e.query_index), (0, 0));
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let p = corpus(CorpusKind::Paired, "P", 2);
        let u = corpus(CorpusKind::Untranscribed, "U", 0);
        assert!(matches!(
            sample_episode(&mut ChaCha8Rng::seed_from_u64(0), &p, &u),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn support_draws_are_uniform() {
        // 10,000 draws over 4 entries: each count within 3 sigma of 2500, and
        // the chi-square statistic (3 dof) below the 0.999 quantile 16.27.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 4];
        let mut q_counts = [0usize; 4];
        for _ in 0..10_000 {
            let (s, q) = draw_indices(&mut rng, 4, 4).unwrap();
            counts[s] += 1;
            q_counts[q] += 1;
        }
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for c in counts.iter().chain(&q_counts) {
            assert!((*c as f64 - 2500.0).abs() <= 3.0 * sigma, "{counts:?} {q_counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
        assert!(chi2 < 16.27, "chi-square {chi2}");
    }
}
