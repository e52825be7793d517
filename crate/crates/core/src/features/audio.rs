use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RsmError};

pub const SAMPLE_RATE: u32 = 16_000;
pub const PEAK_TARGET: f64 = 0.95;
pub const RMS_TARGET: f64 = 0.1;

/// Mono PCM audio at 16 kHz with samples in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(RsmError::Format(format!(
                "sample rate {sample_rate} Hz is not supported; expected {SAMPLE_RATE} Hz"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !(s.abs() <= 1.0)) {
            return Err(RsmError::InvalidInput(format!(
                "sample {i} = {} lies outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Peak,
    Rms,
    None,
}

/// Reads a RIFF/WAVE file holding 16-bit mono PCM at 16 kHz.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(RsmError::Format(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(RsmError::Format(format!(
            "{}: expected {SAMPLE_RATE} Hz, found {} Hz (resample before ingestion)",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(RsmError::Format(format!(
            "{}: expected 16-bit integer PCM, found {}-bit {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Ok(AudioClip {
        samples,
        sample_rate: SAMPLE_RATE,
    })
}

/// Encodes a clip as 16-bit mono PCM WAV bytes.
pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).map_err(|e| RsmError::Format(e.to_string()))?;
        for &s in &clip.samples {
            let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(q).map_err(|e| RsmError::Format(e.to_string()))?;
        }
        writer.finalize().map_err(|e| RsmError::Format(e.to_string()))?;
    }
    Ok(cursor.into_inner())
}

fn wav_error(path: &Path, e: hound::Error) -> RsmError {
    match e {
        hound::Error::IoError(io) => RsmError::file(path, io),
        other => RsmError::Format(format!("{}: {other}", path.display())),
    }
}

/// Peak (default) or RMS loudness normalization. Silent clips pass through.
pub fn normalize_audio(clip: &AudioClip, mode: Normalization) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(RsmError::InvalidInput("cannot normalize an empty clip".into()));
    }
    let peak = clip.peak();
    if peak == 0.0 || mode == Normalization::None {
        return Ok(clip.clone());
    }
    let gain = match mode {
        Normalization::Peak => PEAK_TARGET / peak,
        Normalization::Rms => {
            let rms = (clip.samples.iter().map(|s| s * s).sum::<f64>() / clip.len() as f64).sqrt();
            (RMS_TARGET / rms).min(PEAK_TARGET / peak)
        }
        Normalization::None => unreachable!(),
    };
    Ok(AudioClip {
        samples: clip.samples.iter().map(|s| s * gain).collect(),
        sample_rate: clip.sample_rate,
    })
}
