//! `ascl-vits` command-line tool.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
//! 3 speaker overlap between corpora, 4 data error, 5 untrained model,
//! 6 non-finite loss during training.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ascl_vits::checkpoint::{self, Checkpoint};
use ascl_vits::data::{
    draw_indices, load_manifest, read_wav, resample, write_wav, Alphabet, CorpusKind, CorpusManifest,
};
use ascl_vits::evaluation::{evaluate_zero_shot, Reference};
use ascl_vits::spectral::SAMPLE_RATE;
use ascl_vits::synthetic::{make_corpus, SyntheticCorpusSpec};
use ascl_vits::training::{run_training, RunOptions, StepRecord, TrainConfig};
use ascl_vits::Error;
use clap::{CommandFactory, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "ascl-vits", version, about = "Zero-shot TTS with adversarial speaker-consistency learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic multi-speaker corpus of harmonic voices.
    MakeSyntheticCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        paired_speakers: usize,
        #[arg(long, default_value_t = 24)]
        untranscribed_speakers: usize,
        #[arg(long, default_value_t = 20)]
        utterances: usize,
        /// Utterance length in seconds.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes metrics.csv and checkpoints/ under --out.
    Train {
        /// TOML training configuration.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        paired: PathBuf,
        #[arg(long)]
        untranscribed: PathBuf,
        /// Alphabet file; defaults to alphabet.txt next to the paired manifest.
        #[arg(long)]
        alphabet: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Print metrics every N steps (0 disables).
        #[arg(long, default_value_t = 50)]
        log_every: u64,
    },
    /// Synthesize text in the voice of a reference recording (24 kHz mono WAV).
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Prior sampling temperature; defaults to the model configuration's.
        #[arg(long)]
        noise_scale: Option<f64>,
        /// Alphabet file; defaults to the one stored in the checkpoint.
        #[arg(long)]
        alphabet: Option<PathBuf>,
    },
    /// Score zero-shot synthesis by speaker-embedding cosine similarity.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest of reference utterances (paired or untranscribed).
        #[arg(long)]
        manifest: PathBuf,
        /// One text per line; blank lines are skipped.
        #[arg(long)]
        texts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training support corpus for the control score; defaults to the
        /// paired manifest recorded in the checkpoint.
        #[arg(long)]
        support: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        noise_scale: Option<f64>,
        #[arg(long)]
        alphabet: Option<PathBuf>,
    },
    /// Print the (support, query) episode a seed would draw.
    InspectEpisode {
        #[arg(long)]
        paired: PathBuf,
        #[arg(long)]
        untranscribed: PathBuf,
        #[arg(long)]
        alphabet: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Model(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Model(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::OddChannels(_) => 2,
        Error::SpeakerOverlap(_) => 3,
        Error::MissingFile(_)
        | Error::Schema { .. }
        | Error::EmptyManifest(_)
        | Error::EmptyCorpus
        | Error::UnsupportedRate(_)
        | Error::EmptyWaveform
        | Error::EmptyText
        | Error::TooShort { .. }
        | Error::TooFewFrames { .. }
        | Error::ShapeMismatch(_)
        | Error::Wav(_) => 4,
        Error::UntrainedModel => 5,
        Error::NonFiniteLoss { .. } => 6,
        Error::Checkpoint(_) | Error::Json(_) | Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(Failure::Model(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::MakeSyntheticCorpus {
            out,
            paired_speakers,
            untranscribed_speakers,
            utterances,
            duration,
            seed,
        } => {
            let spec = SyntheticCorpusSpec {
                n_paired_speakers: paired_speakers,
                n_untranscribed_speakers: untranscribed_speakers,
                utterances_per_speaker: utterances,
                seed,
                duration_s: duration,
            };
            let corpus = make_corpus(&spec, &out)?;
            println!("paired manifest: {}", corpus.paired_manifest.display());
            println!("untranscribed manifest: {}", corpus.untranscribed_manifest.display());
            println!("alphabet: {}", corpus.alphabet.display());
            Ok(())
        }
        Command::Train {
            config,
            paired,
            untranscribed,
            alphabet,
            out,
            resume,
            seed,
            log_every,
        } => train(&config, &paired, &untranscribed, alphabet.as_deref(), &out, resume, seed, log_every),
        Command::Synthesize {
            checkpoint,
            text,
            reference,
            out,
            seed,
            noise_scale,
            alphabet,
        } => {
            let ck = checkpoint::load::<f32>(&checkpoint)?;
            let alphabet = checkpoint_alphabet(&ck, alphabet.as_deref())?;
            let tokens = alphabet.tokenize(&text)?;
            let wave = read_reference(&reference)?;
            let noise = noise_scale.unwrap_or(ck.model.config.noise_scale) as f32;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let synth = ck.model.synthesize(&tokens, &wave, noise, &mut rng)?;
            write_wav(&out, &synth.wave, SAMPLE_RATE)?;
            let frames: usize = synth.durations.iter().sum();
            println!(
                "wrote {} ({} samples, {:.3} s, durations {:?})",
                out.display(),
                synth.wave.len(),
                synth.wave.len() as f64 / SAMPLE_RATE as f64,
                synth.durations
            );
            debug_assert_eq!(frames * ascl_vits::spectral::HOP, synth.wave.len());
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            texts,
            out,
            support,
            seed,
            noise_scale,
            alphabet,
        } => evaluate(&checkpoint, &manifest, &texts, &out, support, seed, noise_scale, alphabet.as_deref()),
        Command::InspectEpisode {
            paired,
            untranscribed,
            alphabet,
            seed,
        } => inspect_episode(&paired, &untranscribed, alphabet.as_deref(), seed),
    }
}

fn default_alphabet(paired: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| paired.parent().unwrap_or(Path::new(".")).join("alphabet.txt"))
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: &Path,
    paired: &Path,
    untranscribed: &Path,
    alphabet: Option<&Path>,
    out: &Path,
    resume: Option<PathBuf>,
    seed: Option<u64>,
    log_every: u64,
) -> CmdResult {
    if !config.is_file() {
        return Err(Failure::Usage(format!("config file not found: {}", config.display())));
    }
    let mut config = TrainConfig::load(config)?;
    if let Some(seed) = seed {
        config.train.seed = seed;
    }
    let paired_manifest = load_manifest(paired, CorpusKind::Paired)?;
    let untranscribed_manifest = load_manifest(untranscribed, CorpusKind::Untranscribed)?;
    let alphabet = Alphabet::load(&default_alphabet(paired, alphabet))?;

    let mut print = |r: &StepRecord| {
        if log_every > 0 && r.step % log_every == 0 {
            println!(
                "step {:>6}  d {:.4}  g_ascl {:.4}  recon {:.4}  kl {:.4}  dur {:.4}",
                r.step, r.d_loss, r.g_ascl, r.recon, r.kl, r.duration
            );
        }
    };
    let mut options = RunOptions::new(out);
    options.resume = resume;
    options.paired_path = Some(paired.to_path_buf());
    options.untranscribed_path = Some(untranscribed.to_path_buf());
    options.on_step = Some(&mut print);
    let last = run_training::<f32>(&config, &alphabet, &paired_manifest, &untranscribed_manifest, options)?;
    println!("final checkpoint: {}", last.display());
    Ok(())
}

fn checkpoint_alphabet(ck: &Checkpoint<f32>, explicit: Option<&Path>) -> Result<Alphabet, Error> {
    match (explicit, &ck.meta.alphabet) {
        (Some(path), _) => Alphabet::load(path),
        (None, Some(symbols)) => Alphabet::new(symbols.chars().collect()),
        (None, None) => Err(Error::Config("checkpoint has no alphabet; pass --alphabet".into())),
    }
}

fn read_reference(path: &Path) -> Result<Vec<f32>, Error> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let (wave, sr) = read_wav(path)?;
    resample(&wave, sr, SAMPLE_RATE)
}

/// Reference manifests may or may not carry text.
fn load_any_manifest(path: &Path) -> Result<CorpusManifest, Error> {
    match load_manifest(path, CorpusKind::Untranscribed) {
        Err(Error::Schema { .. }) => load_manifest(path, CorpusKind::Paired),
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    checkpoint: &Path,
    manifest: &Path,
    texts: &Path,
    out: &Path,
    support: Option<PathBuf>,
    seed: u64,
    noise_scale: Option<f64>,
    alphabet: Option<&Path>,
) -> CmdResult {
    let ck = checkpoint::load::<f32>(checkpoint)?;
    let alphabet = checkpoint_alphabet(&ck, alphabet)?;
    if !texts.is_file() {
        return Err(Error::MissingFile(texts.to_path_buf()).into());
    }
    let texts = fs::read_to_string(texts)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| alphabet.tokenize(l))
        .collect::<Result<Vec<_>, _>>()?;

    let references = load_any_manifest(manifest)?
        .entries
        .iter()
        .map(|e| {
            Ok(Reference {
                utterance_id: e
                    .audio_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                speaker: e.speaker_id.clone(),
                wave: read_reference(&e.audio_path)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    // One utterance per support speaker.
    let mut support_waves = Vec::new();
    if !texts.is_empty() {
        if let Some(path) = support.or_else(|| ck.meta.paired_manifest.clone()) {
            let m = load_any_manifest(&path)?;
            let mut seen = std::collections::BTreeSet::new();
            for e in &m.entries {
                if seen.insert(e.speaker_id.clone()) {
                    support_waves.push(read_reference(&e.audio_path)?);
                }
            }
        }
    }

    let noise = noise_scale.unwrap_or(ck.model.config.noise_scale) as f32;
    let report = evaluate_zero_shot(
        &ck.model,
        &ck.model.speaker_encoder,
        &references,
        &texts,
        &support_waves,
        &ck.meta.training_speakers,
        noise,
        seed,
    )?;
    report.write(out)?;
    println!("{} rows written to {}", report.rows.len(), out.join("report.csv").display());
    if let (Some(r), Some(s)) = (report.summary.secs_to_reference.mean, report.summary.secs_to_support.mean) {
        println!("mean SECS to reference {r:.4}, to support {s:.4}");
    }
    if !report.summary.seen_speakers.is_empty() {
        println!("warning: speakers seen in training: {}", report.summary.seen_speakers.join(", "));
    }
    Ok(())
}

fn inspect_episode(paired: &Path, untranscribed: &Path, alphabet: Option<&Path>, seed: u64) -> CmdResult {
    let p = load_manifest(paired, CorpusKind::Paired)?;
    let u = load_manifest(untranscribed, CorpusKind::Untranscribed)?;
    ascl_vits::data::assert_disjoint_speakers(&p, &u)?;
    let alphabet = Alphabet::load(&default_alphabet(paired, alphabet))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, q) = draw_indices(&mut rng, p.len(), u.len())?;
    let (se, qe) = (&p.entries[s], &u.entries[q]);
    let text = se.text.as_deref().unwrap_or_default();
    let tokens = alphabet.tokenize(text)?;
    let seconds = |path: &Path| -> Result<f64, Error> {
        let (wave, sr) = read_wav(path)?;
        Ok(wave.len() as f64 / sr as f64)
    };
    println!("seed: {seed}");
    println!("support.index: {s}");
    println!("support.path: {}", se.audio_path.display());
    println!("support.speaker: {}", se.speaker_id);
    println!("support.text: {text}");
    println!("support.tokens: {tokens:?}");
    println!("support.seconds: {:.4}", seconds(&se.audio_path)?);
    println!("query.index: {q}");
    println!("query.path: {}", qe.audio_path.display());
    println!("query.speaker: {}", qe.speaker_id);
    println!("query.seconds: {:.4}", seconds(&qe.audio_path)?);
    Ok(())
}
