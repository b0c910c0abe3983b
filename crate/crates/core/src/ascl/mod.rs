//! Adversarial speaker-consistency learning: a speaker-conditioned waveform
//! discriminator, its least-squares objectives, and the stop gradient that
//! keeps the adversarial signal away from the encoders.

pub mod discriminator;
pub mod loss;

pub use discriminator::{score_len, Discriminator, MIN_WAVE_LEN};
pub use loss::{discriminator_loss, generator_loss, stop_gradient, DEFAULT_ALPHA};
