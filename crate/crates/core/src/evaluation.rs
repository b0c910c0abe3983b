//! Speaker-embedding cosine similarity (SECS) and zero-shot synthesis reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SpectralFeatures;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::speaker::{cosine_similarity, RawSpeakerEmbedding, SpeakerEncoder};

pub const REPORT_HEADER: &str = "utterance_id,reference_speaker,secs_to_reference,secs_to_support";

pub fn embed_wave<T: Scalar>(encoder: &dyn SpeakerEncoder<T>, wave: &[T]) -> Result<RawSpeakerEmbedding<T>> {
    encoder.embed(&SpectralFeatures::extract(wave)?.mel)
}

/// Cosine similarity of the raw speaker embeddings of two waveforms, in `[-1, 1]`.
pub fn secs<T: Scalar>(encoder: &dyn SpeakerEncoder<T>, a: &[T], b: &[T]) -> Result<T> {
    let ea = embed_wave(encoder, a)?;
    let eb = embed_wave(encoder, b)?;
    Ok(cosine_similarity(ea.tensor().data(), eb.tensor().data()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecsRow {
    pub utterance_id: String,
    pub reference_speaker: String,
    pub secs_to_reference: f64,
    pub secs_to_support: f64,
}

/// Mean and population standard deviation; both `None` for an empty group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Stats { mean: None, std: None };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stats {
            mean: Some(mean),
            std: Some(var.sqrt()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecsSummary {
    pub rows: usize,
    pub secs_to_reference: Stats,
    pub secs_to_support: Stats,
    /// Reference speakers that the model saw during training.
    pub seen_speakers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecsReport {
    pub rows: Vec<SecsRow>,
    pub summary: SecsSummary,
}

impl SecsReport {
    pub fn from_rows(rows: Vec<SecsRow>, seen_speakers: Vec<String>) -> Self {
        let to_ref: Vec<f64> = rows.iter().map(|r| r.secs_to_reference).collect();
        let to_sup: Vec<f64> = rows.iter().map(|r| r.secs_to_support).collect();
        let summary = SecsSummary {
            rows: rows.len(),
            secs_to_reference: Stats::of(&to_ref),
            secs_to_support: Stats::of(&to_sup),
            seen_speakers,
        };
        SecsReport { rows, summary }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.utterance_id, r.reference_speaker, r.secs_to_reference, r.secs_to_support
            ));
        }
        out
    }

    /// Writes `report.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        let mut f = fs::File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(&mut f, &self.summary)?;
        writeln!(f)?;
        Ok(())
    }
}

/// One reference utterance of an evaluation speaker.
#[derive(Clone, Debug)]
pub struct Reference<T> {
    pub utterance_id: String,
    pub speaker: String,
    pub wave: Vec<T>,
}

/// Synthesize every text in the voice of every reference and score the result
/// against the reference and, as a control, against the training support
/// speakers (mean SECS over one utterance per support speaker).
///
/// References whose speaker appears in `training_speakers` are still scored
/// but listed in the summary's `seen_speakers`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_zero_shot<T: Scalar>(
    model: &Model<T>,
    encoder: &dyn SpeakerEncoder<T>,
    references: &[Reference<T>],
    texts: &[Vec<u32>],
    support: &[Vec<T>],
    training_speakers: &[String],
    noise_scale: T,
    seed: u64,
) -> Result<SecsReport> {
    if model.steps_trained == 0 {
        return Err(Error::UntrainedModel);
    }
    let mut seen: Vec<String> = references
        .iter()
        .filter(|r| training_speakers.contains(&r.speaker))
        .map(|r| r.speaker.clone())
        .collect();
    seen.sort();
    seen.dedup();
    if texts.is_empty() || references.is_empty() {
        return Ok(SecsReport::from_rows(Vec::new(), seen));
    }
    if support.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let support_emb = support
        .iter()
        .map(|w| embed_wave(encoder, w))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(texts.len() * references.len());
    for (ti, tokens) in texts.iter().enumerate() {
        for r in references {
            let out = model.synthesize(tokens, &r.wave, noise_scale, &mut rng)?;
            let e = embed_wave(encoder, &out.wave)?;
            let er = embed_wave(encoder, &r.wave)?;
            let to_ref = cosine_similarity(e.tensor().data(), er.tensor().data()).as_f64();
            let to_sup = support_emb
                .iter()
                .map(|s| cosine_similarity(e.tensor().data(), s.tensor().data()).as_f64())
                .sum::<f64>()
                / support_emb.len() as f64;
            rows.push(SecsRow {
                utterance_id: format!("{}#t{ti}", r.utterance_id),
                reference_speaker: r.speaker.clone(),
                secs_to_reference: to_ref,
                secs_to_support: to_sup,
            });
        }
    }
    Ok(SecsReport::from_rows(rows, seen))
}
