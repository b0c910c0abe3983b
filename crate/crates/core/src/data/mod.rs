//! Corpus ingestion, feature extraction and episode sampling.

pub mod audio;
pub mod episode;
pub mod features;
pub mod manifest;
pub mod tokenizer;

pub use audio::{read_wav, resample, write_wav, SUPPORTED_RATES};
pub use episode::{draw_indices, sample_episode, EpisodeTuple, LoadedCorpus};
pub use features::{linear_spectrogram, mel_spectrogram, SpectralFeatures};
pub use manifest::{assert_disjoint_speakers, load_manifest, CorpusKind, CorpusManifest, ManifestEntry};
pub use tokenizer::{Alphabet, UNK_ID};
