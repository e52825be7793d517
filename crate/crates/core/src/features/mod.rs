//! Audio ingestion, normalization and log-mel extraction.

mod audio;
mod mel;
pub mod melf;

pub use audio::{encode_wav, load_wav, normalize_audio, AudioClip, Normalization, PEAK_TARGET, SAMPLE_RATE};
pub use mel::{hz_to_mel, mel_spectrogram, mel_to_hz, MelConfig, MelExtractor, MelFilterbank, MelSpectrogram};
pub use melf::{decode_melf, encode_melf, read_melf};

use std::path::Path;

use crate::error::Result;

/// Load → normalize → log-mel, the full front end for one file.
pub fn extract_file(path: impl AsRef<Path>, norm: Normalization, extractor: &MelExtractor) -> Result<MelSpectrogram> {
    let clip = load_wav(path)?;
    let clip = normalize_audio(&clip, norm)?;
    extractor.compute(&clip)
}
