use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Result, RsmError};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub win_size: usize,
    pub hop_size: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: SAMPLE_RATE,
            fft_size: 1280,
            win_size: 1280,
            hop_size: 320,
            mel_bins: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.win_size == 0 || self.win_size > self.fft_size {
            return Err(RsmError::config("mel.win_size", "must be in 1..=fft_size"));
        }
        if self.hop_size == 0 {
            return Err(RsmError::config("mel.hop_size", "must be positive"));
        }
        if self.mel_bins == 0 {
            return Err(RsmError::config("mel.mel_bins", "must be positive"));
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(RsmError::config(
                "mel.fmax",
                format!("need 0 <= fmin < fmax <= {nyquist}"),
            ));
        }
        if !(self.log_floor > 0.0) {
            return Err(RsmError::config("mel.log_floor", "must be positive"));
        }
        Ok(())
    }

    pub fn pad(&self) -> usize {
        self.win_size / 2
    }

    /// Shortest clip that survives reflect padding.
    pub fn min_samples(&self) -> usize {
        (self.pad() + 1).max(self.win_size.saturating_sub(2 * self.pad()))
    }

    /// `1 + floor((padded_len - win_size) / hop_size)`.
    pub fn frame_count(&self, samples: usize) -> usize {
        let padded = samples + 2 * self.pad();
        if padded < self.win_size {
            return 0;
        }
        1 + (padded - self.win_size) / self.hop_size
    }
}

/// Log-mel energies, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Matrix,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.cols()
    }

    /// Copy holding only frames `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> MelSpectrogram {
        let cols = self.frames.cols();
        let data = self.frames.data()[start * cols..(start + len) * cols].to_vec();
        MelSpectrogram {
            frames: Matrix::from_vec(len, cols, data).expect("window within bounds"),
            config: self.config.clone(),
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters, each normalized to unit area.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// Per filter: first FFT bin with non-zero weight, then the weights.
    filters: Vec<(usize, Vec<f64>)>,
    centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let n_freqs = cfg.fft_size / 2 + 1;
        let sr = f64::from(cfg.sample_rate);
        let fft_freqs: Vec<f64> = (0..n_freqs).map(|k| k as f64 * sr / cfg.fft_size as f64).collect();
        let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let points: Vec<f64> = (0..cfg.mel_bins + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bins + 1) as f64))
            .collect();

        let mut filters = Vec::with_capacity(cfg.mel_bins);
        for m in 0..cfg.mel_bins {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            let enorm = 2.0 / (right - left);
            let mut start = None;
            let mut weights = Vec::new();
            for (k, &f) in fft_freqs.iter().enumerate() {
                let rising = (f - left) / (center - left);
                let falling = (right - f) / (right - center);
                let w = rising.min(falling).max(0.0);
                if w > 0.0 {
                    if start.is_none() {
                        start = Some(k);
                    }
                    weights.push(w * enorm);
                } else if start.is_some() {
                    break;
                }
            }
            filters.push((start.unwrap_or(0), weights));
        }
        MelFilterbank {
            filters,
            centers: points[1..=cfg.mel_bins].to_vec(),
        }
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers
    }

    /// Dense weight of filter `m` at FFT bin `k`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (start, w) = &self.filters[m];
        if k < *start {
            0.0
        } else {
            w.get(k - start).copied().unwrap_or(0.0)
        }
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Reusable STFT + mel front end for one configuration.
pub struct MelExtractor {
    cfg: MelConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: MelFilterbank,
}

impl MelExtractor {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        // periodic Hann
        let window = (0..cfg.win_size)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / cfg.win_size as f64).cos())
            .collect();
        Ok(MelExtractor {
            cfg: cfg.clone(),
            fft,
            window,
            filterbank: MelFilterbank::new(cfg),
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        let cfg = &self.cfg;
        if clip.sample_rate != cfg.sample_rate {
            return Err(RsmError::Format(format!(
                "clip is {} Hz, mel config expects {} Hz",
                clip.sample_rate, cfg.sample_rate
            )));
        }
        if clip.len() < cfg.min_samples() {
            return Err(RsmError::InvalidInput(format!(
                "clip too short: {} samples, need at least {}",
                clip.len(),
                cfg.min_samples()
            )));
        }
        let padded = reflect_pad(&clip.samples, cfg.pad());
        let n_frames = cfg.frame_count(clip.len());
        let n_freqs = cfg.fft_size / 2 + 1;
        let floor_log = cfg.log_floor.ln();

        let mut frames = Matrix::zeros(n_frames, cfg.mel_bins);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut power = vec![0.0; n_freqs];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..n_frames {
            let start = t * cfg.hop_size;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < cfg.win_size {
                    Complex::new(padded[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = frames.row_mut(t);
            self.filterbank.apply(&power, row);
            for v in row.iter_mut() {
                *v = if *v > cfg.log_floor { v.ln() } else { floor_log };
            }
        }
        Ok(MelSpectrogram {
            frames,
            config: cfg.clone(),
        })
    }
}

/// Hann-windowed power STFT → mel filterbank → natural log with a floor.
pub fn mel_spectrogram(clip: &AudioClip, cfg: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(cfg)?.compute(clip)
}

/// Mirror padding that excludes the edge sample.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| x[n - 1 - i]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 16000).unwrap()
    }

    fn sine(freq: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
            .collect()
    }

    #[test]
    fn reflect_padding_layout() {
        assert_eq!(
            reflect_pad(&[1.0, 2.0, 3.0, 4.0], 2),
            vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]
        );
    }

    #[test]
    fn zero_signal_hits_floor() {
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&clip(vec![0.0; 4000]), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(mel.frames.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn frame_count_matches_sliding_window() {
        let cfg = MelConfig::default();
        let n = 16000;
        // Count window placements over the padded signal one hop at a time.
        let padded = n + 2 * 640;
        let mut count = 0;
        let mut start = 0;
        while start + 1280 <= padded {
            count += 1;
            start += 320;
        }
        assert_eq!(count, 51);
        assert_eq!(cfg.frame_count(n), count);
        let mel = mel_spectrogram(&clip(vec![0.0; n]), &cfg).unwrap();
        assert_eq!(mel.num_frames(), count);
        assert_eq!(mel.num_bins(), 80);
    }

    #[test]
    fn short_clip_error_states_minimum() {
        let err = mel_spectrogram(&clip(vec![0.0; 100]), &MelConfig::default()).unwrap_err();
        assert!(err.to_string().contains("641"), "{err}");
    }

    #[test]
    fn sine_peaks_in_nearest_filter() {
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&clip(sine(440.0, 1.0, 16000)), &cfg).unwrap();

        // Independent recomputation of the centre frequencies.
        let lo = 2595.0 * (1.0f64 + 0.0 / 700.0).log10();
        let hi = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let centers: Vec<f64> = (1..=80)
            .map(|i| {
                let m = lo + (hi - lo) * i as f64 / 81.0;
                700.0 * (10f64.powf(m / 2595.0) - 1.0)
            })
            .collect();
        let fb = MelFilterbank::new(&cfg);
        for (a, b) in centers.iter().zip(fb.center_frequencies()) {
            assert!((a - b).abs() < 1e-9);
        }
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs()))
            .unwrap()
            .0;
        for t in 2..mel.num_frames() - 2 {
            let row = mel.frames.row(t);
            let argmax = (0..80).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, nearest, "frame {t}");
        }
    }

    #[test]
    fn filters_have_unit_area_in_hz() {
        // Area normalization: sum_k w_k * bin_width ≈ 1 for filters wide enough to sample well.
        let cfg = MelConfig::default();
        let fb = MelFilterbank::new(&cfg);
        let bin_hz = 16000.0 / 1280.0;
        for m in 20..80 {
            let area: f64 = (0..641).map(|k| fb.weight(m, k)).sum::<f64>() * bin_hz;
            assert!((area - 1.0).abs() < 0.05, "filter {m} area {area}");
        }
    }

    #[test]
    fn sign_flip_and_doubling() {
        let cfg = MelConfig::default();
        let x: Vec<f64> = sine(300.0, 0.2, 8000)
            .iter()
            .zip(sine(1234.0, 0.1, 8000))
            .map(|(a, b)| a + b)
            .collect();
        let base = mel_spectrogram(&clip(x.clone()), &cfg).unwrap();
        let flipped = mel_spectrogram(&clip(x.iter().map(|v| -v).collect()), &cfg).unwrap();
        assert_eq!(base, flipped);
        let doubled = mel_spectrogram(&clip(x.iter().map(|v| 2.0 * v).collect()), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        for (a, b) in base.frames.data().iter().zip(doubled.frames.data()) {
            if *a > floor {
                assert!((b - a - 4f64.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = MelConfig {
            win_size: 2048,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MelConfig {
            fmax: 9000.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MelConfig {
            hop_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn frame_count_formula(len in 1280usize..32000) {
            let cfg = MelConfig::default();
            let mel = mel_spectrogram(&clip(vec![0.0; len]), &cfg).unwrap();
            proptest::prop_assert_eq!(mel.num_frames(), 1 + (len + 1280 - 1280) / 320);
        }
    }
}
