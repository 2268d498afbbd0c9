//! Corpus ingestion, deterministic splits and waveform conditioning.
//!
//! The corpus follows the ESC-50 layout: a metadata table
//! (`meta/esc50.csv` with at least `filename,fold,target,category`
//! columns) and the audio files under `audio/`. Splits are drawn
//! per class with a fixed ratio so every subset stays class-balanced.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rubato::{
    Resampler, SincFixedIn, SincInterpolationParameters, SincInterpolationType, WindowFunction,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One entry of the corpus manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AudioClip {
    pub clip_id: String,
    pub class_label: usize,
    pub file_path: PathBuf,
    /// Clip duration in seconds, read from the audio header.
    pub duration: f64,
}

/// The ingested corpus: clips plus the class layout they satisfy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub clips: Vec<AudioClip>,
    pub class_count: usize,
    pub clips_per_class: usize,
}

impl CorpusManifest {
    pub fn clips_of_class(&self, class: usize) -> impl Iterator<Item = &AudioClip> {
        self.clips.iter().filter(move |c| c.class_label == class)
    }
}

/// Subset assignment of a single clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Validation => write!(f, "validation"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Deterministic clip → split mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub mapping: BTreeMap<String, Split>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn split_of(&self, clip_id: &str) -> Option<Split> {
        self.mapping.get(clip_id).copied()
    }

    pub fn clip_ids(&self, split: Split) -> Vec<&str> {
        self.mapping
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Flat text rendering (clip_id, split), one row per line, sorted by id.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (id, split) in &self.mapping {
            out.push_str(id);
            out.push('\t');
            out.push_str(&split.to_string());
            out.push('\n');
        }
        out
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_table()).map_err(|e| Error::io(path, e))
    }
}

/// Time-domain audio samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be > 0".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "waveform contains non-finite samples".into(),
            ));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn metadata_path(root: &Path) -> Option<PathBuf> {
    let candidates = [root.join("meta").join("esc50.csv"), root.join("esc50.csv")];
    candidates.into_iter().find(|p| p.is_file())
}

/// Ingest an ESC-50 style corpus from `root`.
///
/// Reads the metadata table, verifies that every referenced audio file
/// exists and that the class layout is balanced, and returns the manifest.
pub fn ingest_esc50(root: &Path) -> Result<CorpusManifest> {
    let meta = metadata_path(root).ok_or_else(|| Error::MetadataNotFound(root.to_path_buf()))?;
    let mut reader = csv::Reader::from_path(&meta).map_err(|e| {
        Error::MetadataInvalid(format!("cannot read {}: {e}", meta.display()))
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::MetadataInvalid(e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MetadataInvalid(format!("missing column `{name}`")))
    };
    let filename_col = col("filename")?;
    let target_col = col("target")?;

    let audio_dir = root.join("audio");
    let mut clips = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MetadataInvalid(e.to_string()))?;
        let filename = record
            .get(filename_col)
            .ok_or_else(|| Error::MetadataInvalid("short record".into()))?
            .to_string();
        let target: usize = record
            .get(target_col)
            .ok_or_else(|| Error::MetadataInvalid("short record".into()))?
            .parse()
            .map_err(|e| Error::MetadataInvalid(format!("bad target for {filename}: {e}")))?;
        let clip_id = filename
            .strip_suffix(".wav")
            .unwrap_or(&filename)
            .to_string();
        if !seen.insert(clip_id.clone()) {
            return Err(Error::DuplicateClipId(clip_id));
        }
        let file_path = audio_dir.join(&filename);
        if !file_path.is_file() {
            return Err(Error::MissingAudioFile { clip_id, path: file_path });
        }
        let duration = wav_duration(&file_path, &clip_id)?;
        clips.push(AudioClip {
            clip_id,
            class_label: target,
            file_path,
            duration,
        });
    }

    if clips.is_empty() {
        return Err(Error::MetadataInvalid("metadata table has no rows".into()));
    }
    let class_count = clips.iter().map(|c| c.class_label).max().unwrap() + 1;
    let mut per_class = vec![0usize; class_count];
    for c in &clips {
        per_class[c.class_label] += 1;
    }
    if let Some(k) = per_class.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(k));
    }
    let clips_per_class = per_class[0];
    if per_class.iter().any(|&n| n != clips_per_class) {
        return Err(Error::MetadataInvalid(format!(
            "unbalanced corpus: per-class clip counts {per_class:?}"
        )));
    }

    Ok(CorpusManifest {
        clips,
        class_count,
        clips_per_class,
    })
}

fn wav_duration(path: &Path, clip_id: &str) -> Result<f64> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Decode {
        clip_id: clip_id.to_string(),
        reason: e.to_string(),
    })?;
    let spec = reader.spec();
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}

/// Draw the per-class train/validation/test assignment.
///
/// Counts follow the ratio exactly when the per-class clip count divides
/// the ratio sum; any remainder goes to the training subset. Shuffling is
/// keyed by `(seed, class)` over the sorted clip ids, so the result is a
/// pure function of the manifest contents and the seed.
pub fn make_splits(
    manifest: &CorpusManifest,
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<SplitAssignment> {
    let (r_train, r_val, r_test) = ratios;
    let ratio_sum = (r_train + r_val + r_test) as usize;
    if ratio_sum == 0 {
        return Err(Error::SplitUnsatisfiable("ratio sum is zero".into()));
    }

    let mut mapping = BTreeMap::new();
    for class in 0..manifest.class_count {
        let mut ids: Vec<&str> = manifest
            .clips_of_class(class)
            .map(|c| c.clip_id.as_str())
            .collect();
        ids.sort_unstable();
        let n = ids.len();
        if n < ratio_sum {
            return Err(Error::SplitUnsatisfiable(format!(
                "class {class} has {n} clips, fewer than the ratio sum {ratio_sum}"
            )));
        }
        let unit = n / ratio_sum;
        let n_val = unit * r_val as usize;
        let n_test = unit * r_test as usize;
        let n_train = n - n_val - n_test;

        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(class as u64));
        ids.shuffle(&mut rng);
        for (i, id) in ids.iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            mapping.insert(id.to_string(), split);
        }
    }

    Ok(SplitAssignment { mapping, seed })
}

/// Decode a clip, down-mix to mono and resample to `target_rate`.
pub fn load_waveform(clip: &AudioClip, target_rate: u32) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(&clip.file_path).map_err(|e| Error::Decode {
        clip_id: clip.clip_id.clone(),
        reason: e.to_string(),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Decode {
            clip_id: clip.clip_id.clone(),
            reason: "zero channels".into(),
        });
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Decode {
                clip_id: clip.clip_id.clone(),
                reason: e.to_string(),
            })?,
        (hound::SampleFormat::Int, bits) if bits <= 32 => {
            let scale = 1.0 / (1i64 << (bits - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Decode {
                    clip_id: clip.clip_id.clone(),
                    reason: e.to_string(),
                })?
        }
        (fmt, bits) => {
            return Err(Error::Decode {
                clip_id: clip.clip_id.clone(),
                reason: format!("unsupported sample format {fmt:?}/{bits}bit"),
            })
        }
    };
    if interleaved.is_empty() {
        return Err(Error::Decode {
            clip_id: clip.clip_id.clone(),
            reason: "zero-length audio".into(),
        });
    }

    // Down-mix: average across channels.
    let frames = interleaved.len() / channels;
    let mut mono = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut acc = 0.0f32;
        for ch in 0..channels {
            acc += interleaved[f * channels + ch];
        }
        mono.push(acc / channels as f32);
    }

    let resampled = if spec.sample_rate == target_rate {
        mono
    } else {
        resample(&mono, spec.sample_rate, target_rate)?
    };
    Waveform::new(resampled, target_rate)
}

/// Band-limited resampling with an exact-length contract: the output holds
/// round(len * to / from) samples.
pub fn resample(samples: &[f32], from: u32, to: u32) -> Result<Vec<f32>> {
    if from == 0 || to == 0 {
        return Err(Error::InvalidArgument("sample rates must be > 0".into()));
    }
    if from == to {
        return Ok(samples.to_vec());
    }
    let expected_len =
        ((samples.len() as u64 * to as u64 + from as u64 / 2) / from as u64) as usize;

    let params = SincInterpolationParameters {
        sinc_len: 128,
        f_cutoff: 0.95,
        interpolation: SincInterpolationType::Cubic,
        oversampling_factor: 128,
        window: WindowFunction::BlackmanHarris2,
    };
    let chunk = 1024;
    let mut rs = SincFixedIn::<f64>::new(to as f64 / from as f64, 2.0, params, chunk, 1)
        .map_err(|e| Error::InvalidArgument(format!("resampler: {e}")))?;
    let delay = rs.output_delay();

    let input: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    let mut output = Vec::with_capacity(expected_len + delay + chunk);
    let mut pos = 0;
    while pos + chunk <= input.len() {
        let out = rs
            .process(&[&input[pos..pos + chunk]], None)
            .map_err(|e| Error::InvalidArgument(format!("resampler: {e}")))?;
        output.extend_from_slice(&out[0]);
        pos += chunk;
    }
    // Flush the remainder and enough zeros to cover the filter delay.
    let mut tail: Vec<f64> = input[pos..].to_vec();
    tail.resize(tail.len() + 2 * rs.input_frames_next().max(chunk), 0.0);
    let mut tpos = 0;
    while output.len() < expected_len + delay && tpos + chunk <= tail.len() {
        let out = rs
            .process(&[&tail[tpos..tpos + chunk]], None)
            .map_err(|e| Error::InvalidArgument(format!("resampler: {e}")))?;
        output.extend_from_slice(&out[0]);
        tpos += chunk;
    }

    let mut trimmed: Vec<f32> = output
        .iter()
        .skip(delay)
        .take(expected_len)
        .map(|&s| s as f32)
        .collect();
    trimmed.resize(expected_len, 0.0);
    Ok(trimmed)
}

/// Crop `duration` seconds at a seed-determined uniform offset.
///
/// Inputs shorter than the target are copied and zero-padded at the tail.
pub fn random_crop(w: &Waveform, duration: f64, seed: u64) -> Result<Waveform> {
    if duration <= 0.0 {
        return Err(Error::InvalidArgument("duration must be positive".into()));
    }
    let out_len = (duration * w.sample_rate as f64).round() as usize;
    let mut samples = vec![0.0f32; out_len];
    if w.samples.len() <= out_len {
        samples[..w.samples.len()].copy_from_slice(&w.samples);
    } else {
        let max_offset = w.samples.len() - out_len;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let offset = rng.gen_range(0..=max_offset);
        samples.copy_from_slice(&w.samples[offset..offset + out_len]);
    }
    Waveform::new(samples, w.sample_rate)
}
