//! Deterministic synthetic speakers: a jittered harmonic source shaped by
//! speaker-specific formant resonances, with per-utterance syllable content.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RsmError};
use crate::features::{encode_wav, load_wav, AudioClip, MelSpectrogram, SAMPLE_RATE};
use crate::io::atomic_write;

const MAX_HARMONIC_HZ: f64 = 7800.0;
const BLOCK: usize = 80;
const OUTPUT_PEAK: f64 = 0.9;
/// Noise floor relative to the voiced signal: −40 dB.
const NOISE_RATIO: f64 = 0.01;
const FORMANT_GAINS: [f64; 3] = [1.0, 0.6, 0.35];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpeaker {
    pub speaker_id: usize,
    pub f0_range: [f64; 2],
    pub formant_centers: [f64; 3],
    pub formant_bandwidths: [f64; 3],
    /// dB per octave of harmonic number.
    pub harmonic_tilt: f64,
    /// Relative standard deviation of per-block f0 perturbation.
    pub jitter: f64,
}

impl SyntheticSpeaker {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.f0_range;
        if !(60.0 <= lo && lo <= hi && hi <= 400.0) {
            return Err(RsmError::InvalidInput(format!(
                "speaker {}: f0 range [{lo}, {hi}] must lie within [60, 400] Hz",
                self.speaker_id
            )));
        }
        let f = self.formant_centers;
        if !(0.0 < f[0] && f[0] < f[1] && f[1] < f[2] && f[2] < 8000.0) {
            return Err(RsmError::InvalidInput(format!(
                "speaker {}: formants {f:?} must be ascending and below 8000 Hz",
                self.speaker_id
            )));
        }
        if self.formant_bandwidths.iter().any(|b| !(*b > 0.0)) {
            return Err(RsmError::InvalidInput(format!(
                "speaker {}: formant bandwidths must be positive",
                self.speaker_id
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter < 0.5) || !self.harmonic_tilt.is_finite() {
            return Err(RsmError::InvalidInput(format!(
                "speaker {}: jitter must lie in [0, 0.5) and tilt must be finite",
                self.speaker_id
            )));
        }
        Ok(())
    }

    /// Draws a plausible voice: log-uniform pitch, vocal-tract-length scaled formants.
    pub fn random(speaker_id: usize, rng: &mut ChaCha8Rng) -> Self {
        let center = (rng.random_range(85f64.ln()..260f64.ln())).exp();
        let tract = rng.random_range(0.82..1.2);
        let base: [f64; 3] = [530.0, 1480.0, 2500.0];
        let mut formants = base.map(|f| f * tract * rng.random_range(0.93..1.07));
        formants[1] = formants[1].max(formants[0] * 1.5);
        formants[2] = formants[2].max(formants[1] * 1.3);
        SyntheticSpeaker {
            speaker_id,
            f0_range: [(center / 1.15).max(60.0), (center * 1.15).min(400.0)],
            formant_centers: formants,
            formant_bandwidths: [
                rng.random_range(50.0..110.0),
                rng.random_range(70.0..150.0),
                rng.random_range(100.0..220.0),
            ],
            harmonic_tilt: rng.random_range(-14.0..-6.0),
            jitter: rng.random_range(0.003..0.02),
        }
    }

    /// Renders `num_samples` of speech-like audio, quantized to the 16-bit grid
    /// so that a WAV round trip is lossless.
    pub fn synthesize(&self, num_samples: usize, rng: &mut ChaCha8Rng) -> Result<AudioClip> {
        self.validate()?;
        if num_samples == 0 {
            return Err(RsmError::InvalidInput("cannot synthesize an empty clip".into()));
        }
        let sr = SAMPLE_RATE as f64;
        let [lo, hi] = self.f0_range;
        let span = hi - lo;
        let f0_center = lo + span * rng.random_range(0.3..0.7);
        let f0_depth = (span * 0.3).min(f0_center - lo).min(hi - f0_center);
        let f0_rate = rng.random_range(0.5..2.5);
        let f0_phase = rng.random_range(0.0..2.0 * PI);

        let syllables = Syllables::draw(num_samples, rng);
        let blocks = num_samples.div_ceil(BLOCK) + 1;
        let max_h = (MAX_HARMONIC_HZ / lo).floor() as usize;

        // Per-block fundamental and harmonic amplitudes at block starts.
        let mut f0s = Vec::with_capacity(blocks);
        let mut amps = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let t = (b * BLOCK) as f64 / sr;
            let jitter: f64 = StandardNormal.sample(rng);
            let f0 = (f0_center + f0_depth * (2.0 * PI * f0_rate * t + f0_phase).sin()) * (1.0 + self.jitter * jitter);
            let (shift, envelope) = syllables.at(b * BLOCK);
            let formants = [
                self.formant_centers[0] * shift[0],
                self.formant_centers[1] * shift[1],
                self.formant_centers[2] * shift[2],
            ];
            let row: Vec<f64> = (1..=max_h)
                .map(|h| {
                    let f = h as f64 * f0;
                    if f > MAX_HARMONIC_HZ {
                        return 0.0;
                    }
                    let tilt = 10f64.powf(self.harmonic_tilt * (h as f64).log2() / 20.0);
                    let resonance: f64 = (0..3)
                        .map(|k| {
                            let x = (f - formants[k]) / (0.5 * self.formant_bandwidths[k]);
                            FORMANT_GAINS[k] / (1.0 + x * x).sqrt()
                        })
                        .sum();
                    envelope * tilt * (resonance + 0.01)
                })
                .collect();
            f0s.push(f0);
            amps.push(row);
        }

        let mut samples = Vec::with_capacity(num_samples);
        let mut phase = 0.0f64;
        let mut amp = vec![0.0; max_h];
        for n in 0..num_samples {
            let b = n / BLOCK;
            let frac = (n % BLOCK) as f64 / BLOCK as f64;
            let f0 = f0s[b] + (f0s[b + 1] - f0s[b]) * frac;
            phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
            for (h, a) in amp.iter_mut().enumerate() {
                *a = amps[b][h] + (amps[b + 1][h] - amps[b][h]) * frac;
            }
            samples.push(harmonic_sum(phase, &amp));
        }

        let rms = (samples.iter().map(|s| s * s).sum::<f64>() / num_samples as f64).sqrt();
        for s in &mut samples {
            let noise: f64 = StandardNormal.sample(rng);
            *s += NOISE_RATIO * rms * noise;
        }
        let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let gain = if peak > 0.0 { OUTPUT_PEAK / peak } else { 0.0 };
        let samples = samples
            .into_iter()
            .map(|s| (s * gain * 32768.0).round() / 32768.0 + 0.0)
            .collect();
        AudioClip::new(samples, SAMPLE_RATE)
    }
}

/// `Σ_h a_h sin(h θ)` via the Chebyshev recurrence.
fn harmonic_sum(theta: f64, amps: &[f64]) -> f64 {
    let c2 = 2.0 * theta.cos();
    let (mut prev, mut cur) = (0.0, theta.sin());
    let mut acc = 0.0;
    for a in amps {
        acc += a * cur;
        let next = c2 * cur - prev;
        prev = cur;
        cur = next;
    }
    acc
}

/// Content: a sequence of vowel-like formant shifts with a syllabic envelope.
struct Syllables {
    bounds: Vec<(usize, usize)>,
    shifts: Vec<[f64; 3]>,
}

impl Syllables {
    fn draw(num_samples: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut bounds = Vec::new();
        let mut shifts = Vec::new();
        let mut start = 0;
        while start < num_samples {
            let len = rng.random_range(2400..4800);
            bounds.push((start, len));
            shifts.push([
                rng.random_range(0.8..1.25),
                rng.random_range(0.8..1.25),
                rng.random_range(0.92..1.08),
            ]);
            start += len;
        }
        Syllables { bounds, shifts }
    }

    fn at(&self, n: usize) -> ([f64; 3], f64) {
        let i = self
            .bounds
            .iter()
            .position(|(s, l)| n < s + l)
            .unwrap_or(self.bounds.len() - 1);
        let (s, l) = self.bounds[i];
        let u = ((n.saturating_sub(s)) as f64 / l as f64).min(1.0);
        let envelope = 0.25 + 0.75 * (PI * u).sin();
        (self.shifts[i], envelope)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Seconds.
    pub min_duration: f64,
    pub max_duration: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 1234,
            num_speakers: 20,
            utterances_per_speaker: 25,
            min_duration: 1.0,
            max_duration: 2.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers < 2 {
            return Err(RsmError::config(
                "corpus.num_speakers",
                "at least 2 speakers are required",
            ));
        }
        if self.utterances_per_speaker == 0 {
            return Err(RsmError::config("corpus.utterances_per_speaker", "must be positive"));
        }
        if !(self.min_duration > 0.0 && self.min_duration <= self.max_duration && self.max_duration <= 60.0) {
            return Err(RsmError::config(
                "corpus.min_duration",
                format!(
                    "duration range [{}, {}] s is invalid",
                    self.min_duration, self.max_duration
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub speaker: usize,
    pub index: usize,
    pub clip: AudioClip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<SyntheticSpeaker>,
    pub utterances: Vec<Utterance>,
}

/// Builds `num_speakers × utterances_per_speaker` clips; each utterance draws
/// from its own RNG stream so the corpus does not depend on generation order.
pub fn gen_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let speakers: Vec<SyntheticSpeaker> = (0..cfg.num_speakers)
        .map(|id| SyntheticSpeaker::random(id, &mut rng))
        .collect();
    let min = (cfg.min_duration * SAMPLE_RATE as f64).round() as usize;
    let max = (cfg.max_duration * SAMPLE_RATE as f64).round() as usize;
    let mut utterances = Vec::with_capacity(cfg.num_speakers * cfg.utterances_per_speaker);
    for sp in &speakers {
        for index in 0..cfg.utterances_per_speaker {
            let mut urng = ChaCha8Rng::seed_from_u64(cfg.seed);
            urng.set_stream(1 + (sp.speaker_id * cfg.utterances_per_speaker + index) as u64);
            let len = urng.random_range(min..=max);
            utterances.push(Utterance {
                speaker: sp.speaker_id,
                index,
                clip: sp.synthesize(len, &mut urng)?,
            });
        }
    }
    Ok(Corpus { speakers, utterances })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusIndex {
    format: String,
    version: u32,
    speakers: Vec<SyntheticSpeaker>,
    utterances: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    file: String,
    speaker: usize,
    index: usize,
}

pub const CORPUS_INDEX: &str = "corpus.json";

impl Corpus {
    pub fn num_speakers(&self) -> usize {
        let mut ids: Vec<usize> = self.utterances.iter().map(|u| u.speaker).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Splits each speaker's utterances into those with `index < n` and the rest.
    pub fn split_by_index(&self, n: usize) -> (Corpus, Corpus) {
        let (a, b): (Vec<_>, Vec<_>) = self.utterances.iter().cloned().partition(|u| u.index < n);
        let wrap = |utterances| Corpus {
            speakers: self.speakers.clone(),
            utterances,
        };
        (wrap(a), wrap(b))
    }

    /// SHA-256 over labels and samples.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for u in &self.utterances {
            h.update((u.speaker as u64).to_le_bytes());
            h.update((u.index as u64).to_le_bytes());
            h.update((u.clip.len() as u64).to_le_bytes());
            for s in &u.clip.samples {
                h.update(s.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes one WAV per utterance plus a `corpus.json` index.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| RsmError::file(dir, e))?;
        let mut entries = Vec::with_capacity(self.utterances.len());
        for u in &self.utterances {
            let file = format!("spk{:03}_utt{:03}.wav", u.speaker, u.index);
            atomic_write(dir.join(&file), &encode_wav(&u.clip)?)?;
            entries.push(IndexEntry {
                file,
                speaker: u.speaker,
                index: u.index,
            });
        }
        let index = CorpusIndex {
            format: "rsm-corpus".into(),
            version: 1,
            speakers: self.speakers.clone(),
            utterances: entries,
        };
        let mut json = serde_json::to_vec_pretty(&index)?;
        json.push(b'\n');
        atomic_write(dir.join(CORPUS_INDEX), &json)
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Corpus> {
        let dir = dir.as_ref();
        let path = dir.join(CORPUS_INDEX);
        let text = std::fs::read_to_string(&path).map_err(|e| RsmError::file(&path, e))?;
        let index: CorpusIndex =
            serde_json::from_str(&text).map_err(|e| RsmError::Format(format!("{}: {e}", path.display())))?;
        if index.format != "rsm-corpus" || index.version != 1 {
            return Err(RsmError::Format(format!(
                "{}: unsupported corpus format {} v{}",
                path.display(),
                index.format,
                index.version
            )));
        }
        let utterances = index
            .utterances
            .into_iter()
            .map(|e| {
                Ok(Utterance {
                    speaker: e.speaker,
                    index: e.index,
                    clip: load_wav(dir.join(&e.file))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            speakers: index.speakers,
            utterances,
        })
    }
}

/// A random contiguous window of `min(T, segment_frames)` frames.
pub fn slice_segment(mel: &MelSpectrogram, segment_frames: usize, rng: &mut impl Rng) -> MelSpectrogram {
    let t = mel.num_frames();
    let len = segment_frames.min(t);
    let start = rng.random_range(0..=t - len);
    mel.window(start, len)
}
