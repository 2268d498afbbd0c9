//! Time-frequency front-end and non-learned embeddings.
//!
//! The log-Mel spectrogram uses a 400-sample Hann window zero-padded to a
//! 512-point FFT, a 160-sample hop, and 80 HTK-spaced Mel filters over
//! 0–8 kHz. Frames are centered with reflection padding, so an N-sample
//! waveform yields ⌊N/hop⌋+1 frames. Filterbank energies are compressed
//! with a natural log after adding a small floor, which keeps silence at
//! a finite constant.

use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataset::Waveform;
use crate::error::{Error, Result};

pub const MEL_BANDS: usize = 80;
pub const WIN_LENGTH: usize = 400;
pub const HOP_LENGTH: usize = 160;
pub const N_FFT: usize = 512;
pub const SAMPLE_RATE: u32 = 16_000;
pub const LOG_FLOOR: f32 = 1e-6;

/// 80-band log-Mel matrix, row-major `(band, frame)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    values: Vec<f32>,
    bands: usize,
    frames: usize,
    /// Frame rate in Hz (sample_rate / hop).
    pub frame_rate: f32,
}

impl LogMelSpectrogram {
    pub fn from_values(values: Vec<f32>, bands: usize, frames: usize, frame_rate: f32) -> Self {
        assert_eq!(values.len(), bands * frames);
        LogMelSpectrogram {
            values,
            bands,
            frames,
            frame_rate,
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn at(&self, band: usize, frame: usize) -> f32 {
        self.values[band * self.frames + frame]
    }

    /// Row-major `(band, frame)` backing storage.
    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Power envelope of a waveform: elementwise squared samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerEnvelope {
    pub values: Vec<f32>,
}

/// Precomputed window, filterbank and FFT plan for the log-Mel transform.
pub struct LogMel {
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
    // (MEL_BANDS) rows of sparse (start_bin, weights) filters.
    filters: Vec<(usize, Vec<f32>)>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl LogMel {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(N_FFT);

        // Periodic Hann of length WIN_LENGTH, zero-padded symmetrically to N_FFT.
        let mut window = vec![0.0f32; N_FFT];
        let pad = (N_FFT - WIN_LENGTH) / 2;
        for i in 0..WIN_LENGTH {
            window[pad + i] =
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / WIN_LENGTH as f64).cos()) as f32;
        }

        let filters = Self::mel_filterbank();
        LogMel {
            fft,
            window,
            filters,
        }
    }

    /// Triangular HTK-spaced filters over 0–8 kHz, peak value 1.
    fn mel_filterbank() -> Vec<(usize, Vec<f32>)> {
        let f_min = 0.0;
        let f_max = SAMPLE_RATE as f64 / 2.0;
        let mel_lo = hz_to_mel(f_min);
        let mel_hi = hz_to_mel(f_max);
        let n_points = MEL_BANDS + 2;
        let hz_points: Vec<f64> = (0..n_points)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_points - 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
        let n_bins = N_FFT / 2 + 1;

        let mut filters = Vec::with_capacity(MEL_BANDS);
        for m in 0..MEL_BANDS {
            let (left, center, right) = (hz_points[m], hz_points[m + 1], hz_points[m + 2]);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = ((f - left) / (center - left)).min((right - f) / (right - center));
                if w > 0.0 {
                    if start.is_none() {
                        start = Some(k);
                    }
                    weights.push(w as f32);
                } else if start.is_some() {
                    break;
                }
            }
            filters.push((start.unwrap_or(0), weights));
        }
        filters
    }

    pub fn compute(&self, w: &Waveform) -> Result<LogMelSpectrogram> {
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidArgument(format!(
                "log-Mel front-end expects {SAMPLE_RATE} Hz input, got {}",
                w.sample_rate
            )));
        }
        let n = w.samples.len();
        if n < WIN_LENGTH {
            return Err(Error::InvalidArgument(format!(
                "input of {n} samples is shorter than one window ({WIN_LENGTH})"
            )));
        }

        let frames = n / HOP_LENGTH + 1;
        let half = N_FFT / 2;

        // Reflection padding around the signal for centered frames.
        let padded_len = n + 2 * half;
        let mut padded = vec![0.0f32; padded_len];
        padded[half..half + n].copy_from_slice(&w.samples);
        for i in 0..half {
            padded[half - 1 - i] = w.samples[(i + 1).min(n - 1)];
            padded[half + n + i] = w.samples[n - 2 - i.min(n - 2)];
        }

        let mut values = vec![0.0f32; MEL_BANDS * frames];
        let mut buf = vec![Complex32::new(0.0, 0.0); N_FFT];
        let mut power = vec![0.0f32; N_FFT / 2 + 1];
        for t in 0..frames {
            let start = t * HOP_LENGTH;
            for i in 0..N_FFT {
                buf[i] = Complex32::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            for (m, (start_bin, weights)) in self.filters.iter().enumerate() {
                let mut acc = 0.0f32;
                for (j, &wgt) in weights.iter().enumerate() {
                    acc += wgt * power[start_bin + j];
                }
                values[m * frames + t] = (acc + LOG_FLOOR).ln();
            }
        }

        Ok(LogMelSpectrogram {
            values,
            bands: MEL_BANDS,
            frames,
            frame_rate: SAMPLE_RATE as f32 / HOP_LENGTH as f32,
        })
    }

    /// Index of the Mel band whose center frequency is nearest to `hz`.
    pub fn band_of_frequency(hz: f64) -> usize {
        let f_max = SAMPLE_RATE as f64 / 2.0;
        let mel_hi = hz_to_mel(f_max);
        let n_points = MEL_BANDS + 2;
        let mut best = (0usize, f64::MAX);
        for m in 0..MEL_BANDS {
            let center = mel_to_hz(mel_hi * (m + 1) as f64 / (n_points - 1) as f64);
            let d = (center - hz).abs();
            if d < best.1 {
                best = (m, d);
            }
        }
        best.0
    }
}

impl Default for LogMel {
    fn default() -> Self {
        Self::new()
    }
}

/// One-shot helper with the default configuration.
pub fn logmel(w: &Waveform) -> Result<LogMelSpectrogram> {
    LogMel::new().compute(w)
}

/// Sound-power embedding: the waveform mapped to its elementwise power.
pub fn sound_power_embedding(w: &Waveform) -> PowerEnvelope {
    PowerEnvelope {
        values: w.samples.iter().map(|&x| x * x).collect(),
    }
}

/// Affine range-mapping of a latent vector into the LED intensity range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineStats {
    pub offset: f32,
    pub scale: f32,
}

impl Default for AffineStats {
    fn default() -> Self {
        AffineStats {
            offset: 0.0,
            scale: 1.0,
        }
    }
}

/// Map `z` to `[0, 1]` via `clip((z - offset) / scale, 0, 1)`.
pub fn latent_normalize(z: &[f32], stats: AffineStats) -> Result<Vec<f32>> {
    if !stats.scale.is_finite() || !stats.offset.is_finite() || stats.scale <= 0.0 {
        return Err(Error::InvalidArgument(
            "latent normalization requires finite stats with scale > 0".into(),
        ));
    }
    Ok(z.iter()
        .map(|&v| ((v - stats.offset) / stats.scale).clamp(0.0, 1.0))
        .collect())
}

/// Global affine normalization applied to spectrograms before the
/// autoencoder; computed once on the training split and stored with
/// checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalAffine {
    pub mean: f32,
    pub std: f32,
}

impl Default for GlobalAffine {
    fn default() -> Self {
        GlobalAffine {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl GlobalAffine {
    /// Mean/std over every entry of the given spectrograms.
    pub fn fit<'a>(specs: impl Iterator<Item = &'a LogMelSpectrogram>) -> Self {
        let mut count = 0usize;
        let mut mean = 0.0f64;
        let mut m2 = 0.0f64;
        for spec in specs {
            for &v in spec.values() {
                count += 1;
                let delta = v as f64 - mean;
                mean += delta / count as f64;
                m2 += delta * (v as f64 - mean);
            }
        }
        let var = if count > 1 { m2 / count as f64 } else { 1.0 };
        GlobalAffine {
            mean: mean as f32,
            std: (var.sqrt() as f32).max(1e-6),
        }
    }

    pub fn apply(&self, v: f32) -> f32 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f32) -> f32 {
        v * self.std + self.mean
    }
}
