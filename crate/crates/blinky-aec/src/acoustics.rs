//! Room simulation: Blinky/source placement, image-source room impulse
//! responses, and propagation of source signals to each Blinky.
//!
//! RIRs follow the Allen–Berkley image-source construction with a
//! Hann-windowed sinc kernel for fractional delays. Wall absorption is an
//! energy coefficient, so the amplitude reflection factor per bounce is
//! `sqrt(1 - absorption)`; absorption 1.0 leaves only the direct path.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Waveform;
use crate::error::{Error, Result};

/// Minimum allowed source/receiver separation in meters.
const MIN_DISTANCE: f64 = 0.1;
/// Interior margin for random placement, meters.
const PLACEMENT_MARGIN: f64 = 0.3;
/// Width of the fractional-delay kernel in milliseconds.
const KERNEL_MS: f64 = 4.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoomScene {
    /// Room dimensions in meters (length, width, height).
    pub dimensions: [f64; 3],
    /// Energy wall-absorption coefficient in (0, 1].
    pub absorption: f64,
    pub max_image_order: u32,
    pub speed_of_sound: f64,
}

impl Default for RoomScene {
    fn default() -> Self {
        RoomScene {
            dimensions: [8.0, 6.0, 4.0],
            absorption: 0.4,
            max_image_order: 10,
            speed_of_sound: 343.0,
        }
    }
}

impl RoomScene {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| d <= 0.0) {
            return Err(Error::Geometry("room dimensions must be positive".into()));
        }
        if !(self.absorption > 0.0 && self.absorption <= 1.0) {
            return Err(Error::Geometry("absorption must lie in (0, 1]".into()));
        }
        if self.speed_of_sound <= 0.0 {
            return Err(Error::Geometry("speed of sound must be positive".into()));
        }
        Ok(())
    }

    /// Digest of the scene geometry and acoustic parameters, used to key
    /// cached RIR archives.
    pub fn digest(&self, placement_seed: u64, sample_rate: u32) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "{:?}|{}|{}|{}|{}|{}",
            self.dimensions,
            self.absorption,
            self.max_image_order,
            self.speed_of_sound,
            placement_seed,
            sample_rate
        ));
        hex::encode(&h.finalize()[..8])
    }
}

/// Fixed positions for the whole experiment: Blinkies and one source per class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Placement {
    pub blinky_positions: Vec<[f64; 3]>,
    pub source_positions: Vec<[f64; 3]>,
    pub seed: u64,
}

/// Room impulse responses indexed by (class, blinky), zero-padded to a
/// common length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RIRSet {
    responses: Vec<Vec<f32>>,
    pub n_classes: usize,
    pub n_blinkies: usize,
    pub common_length: usize,
    /// Direct-path delay in samples for each (class, blinky) pair.
    pub direct_delays: Vec<usize>,
    pub sample_rate: u32,
    pub scene_digest: String,
}

impl RIRSet {
    pub fn response(&self, class: usize, blinky: usize) -> &[f32] {
        &self.responses[class * self.n_blinkies + blinky]
    }

    pub fn direct_delay(&self, class: usize, blinky: usize) -> usize {
        self.direct_delays[class * self.n_blinkies + blinky]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes =
            bincode::serialize(self).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        bincode::deserialize(&bytes).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Draw uniform interior positions for `n_blinkies` receivers and
/// `n_classes` sources, deterministic under `seed`.
pub fn generate_placement(
    scene: &RoomScene,
    n_blinkies: usize,
    n_classes: usize,
    seed: u64,
) -> Result<Placement> {
    scene.validate()?;
    if scene.dimensions.iter().any(|&d| d <= 2.0 * PLACEMENT_MARGIN) {
        return Err(Error::Geometry(format!(
            "room too small for a {PLACEMENT_MARGIN} m interior margin"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha20Rng| -> [f64; 3] {
        let mut p = [0.0; 3];
        for (axis, v) in p.iter_mut().enumerate() {
            *v = rng.gen_range(PLACEMENT_MARGIN..scene.dimensions[axis] - PLACEMENT_MARGIN);
        }
        p
    };
    let blinky_positions: Vec<[f64; 3]> = (0..n_blinkies).map(|_| draw(&mut rng)).collect();
    let source_positions: Vec<[f64; 3]> = (0..n_classes).map(|_| draw(&mut rng)).collect();
    Ok(Placement {
        blinky_positions,
        source_positions,
        seed,
    })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Image-source RIR between one source and one receiver.
fn image_source_rir(
    scene: &RoomScene,
    source: &[f64; 3],
    receiver: &[f64; 3],
    sample_rate: u32,
    n_samples: usize,
) -> Vec<f32> {
    let beta = (1.0 - scene.absorption).sqrt();
    let order = scene.max_image_order as i64;
    let cts = scene.speed_of_sound / sample_rate as f64; // meters per sample
    let tw = (2.0 * (KERNEL_MS / 1000.0 * sample_rate as f64).round()) as usize;
    let half = tw as i64 / 2;
    let [lx, ly, lz] = scene.dimensions;

    let mut rir = vec![0.0f64; n_samples];
    let lattice = order / 2 + 1;
    for mx in -lattice..=lattice {
        for my in -lattice..=lattice {
            for mz in -lattice..=lattice {
                for q in 0..=1i64 {
                    for j in 0..=1i64 {
                        for k in 0..=1i64 {
                            let n_reflections = (2 * mx - q).abs() + (2 * my - j).abs()
                                + (2 * mz - k).abs();
                            if n_reflections > order {
                                continue;
                            }
                            let img = [
                                (1 - 2 * q) as f64 * source[0] + 2.0 * mx as f64 * lx,
                                (1 - 2 * j) as f64 * source[1] + 2.0 * my as f64 * ly,
                                (1 - 2 * k) as f64 * source[2] + 2.0 * mz as f64 * lz,
                            ];
                            let dist = distance(&img, receiver);
                            let delay = dist / cts; // in samples
                            let idx = delay.floor() as i64;
                            if idx as usize >= n_samples {
                                continue;
                            }
                            let gain = beta.powi(n_reflections as i32)
                                / (4.0 * std::f64::consts::PI * dist.max(MIN_DISTANCE));
                            let frac = delay - idx as f64;
                            let start = idx - half + 1;
                            for n in 0..tw as i64 {
                                let pos = start + n;
                                if pos < 0 || pos as usize >= n_samples {
                                    continue;
                                }
                                let t = (n - half + 1) as f64 - frac;
                                let w = 0.5
                                    * (1.0
                                        + (2.0 * std::f64::consts::PI * t / tw as f64).cos());
                                rir[pos as usize] += gain * w * sinc(t);
                            }
                        }
                    }
                }
            }
        }
    }
    rir.into_iter().map(|v| v as f32).collect()
}

/// Compute the full (class × blinky) RIR matrix for a placement.
pub fn compute_rirs(
    scene: &RoomScene,
    placement: &Placement,
    sample_rate: u32,
) -> Result<RIRSet> {
    scene.validate()?;
    let n_classes = placement.source_positions.len();
    let n_blinkies = placement.blinky_positions.len();
    if n_classes == 0 || n_blinkies == 0 {
        return Err(Error::Geometry("placement is empty".into()));
    }

    let cts = scene.speed_of_sound / sample_rate as f64;
    let tw = (2.0 * (KERNEL_MS / 1000.0 * sample_rate as f64).round()) as usize;
    let diag = distance(&[0.0; 3], &scene.dimensions);
    let max_dist = (scene.max_image_order as f64 + 1.0) * diag;
    let n_samples = (max_dist / cts).ceil() as usize + tw;

    let mut pairs = Vec::with_capacity(n_classes * n_blinkies);
    for class in 0..n_classes {
        for blinky in 0..n_blinkies {
            let src = placement.source_positions[class];
            let rcv = placement.blinky_positions[blinky];
            let d = distance(&src, &rcv);
            if d < MIN_DISTANCE {
                return Err(Error::Geometry(format!(
                    "source {class} and blinky {blinky} are {d:.3} m apart, below the {MIN_DISTANCE} m minimum"
                )));
            }
            pairs.push((src, rcv, d));
        }
    }

    let responses: Vec<Vec<f32>> = pairs
        .par_iter()
        .map(|(src, rcv, _)| image_source_rir(scene, src, rcv, sample_rate, n_samples))
        .collect();

    // Trim the shared trailing silence, then pad to the common support.
    let support = responses
        .iter()
        .map(|r| r.iter().rposition(|&v| v != 0.0).map_or(0, |p| p + 1))
        .max()
        .unwrap_or(0)
        .max(1);
    let responses: Vec<Vec<f32>> = responses
        .into_iter()
        .map(|mut r| {
            r.truncate(support);
            r.resize(support, 0.0);
            r
        })
        .collect();

    let direct_delays = pairs
        .iter()
        .map(|(_, _, d)| (d / cts).round() as usize)
        .collect();

    Ok(RIRSet {
        responses,
        n_classes,
        n_blinkies,
        common_length: support,
        direct_delays,
        sample_rate,
        scene_digest: scene.digest(placement.seed, sample_rate),
    })
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Full linear convolution of a source signal with an impulse response.
pub fn propagate(source: &Waveform, rir: &[f32]) -> Result<Waveform> {
    if rir.is_empty() {
        return Err(Error::InvalidArgument("empty impulse response".into()));
    }
    let out_len = source.samples.len() + rir.len() - 1;
    let fft_len = next_pow2(out_len);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);

    let mut a = vec![Complex32::new(0.0, 0.0); fft_len];
    for (i, &s) in source.samples.iter().enumerate() {
        a[i].re = s;
    }
    let mut b = vec![Complex32::new(0.0, 0.0); fft_len];
    for (i, &s) in rir.iter().enumerate() {
        b[i].re = s;
    }
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x *= *y;
    }
    inv.process(&mut a);
    let scale = 1.0 / fft_len as f32;
    let samples = a[..out_len].iter().map(|c| c.re * scale).collect();
    Waveform::new(samples, source.sample_rate)
}

/// Propagate and crop to a fixed window anchored at the direct-path onset.
///
/// Keeps every downstream shape fixed: the result always holds `out_len`
/// samples, zero-padded when the convolution tail runs short.
pub fn propagate_windowed(
    source: &Waveform,
    rir: &[f32],
    direct_delay: usize,
    out_len: usize,
) -> Result<Waveform> {
    let full = propagate(source, rir)?;
    let mut samples = vec![0.0f32; out_len];
    let available = full.samples.len().saturating_sub(direct_delay);
    let n = available.min(out_len);
    samples[..n].copy_from_slice(&full.samples[direct_delay..direct_delay + n]);
    Waveform::new(samples, source.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_is_deterministic_and_interior() {
        let scene = RoomScene::default();
        let a = generate_placement(&scene, 5, 50, 0).unwrap();
        let b = generate_placement(&scene, 5, 50, 0).unwrap();
        assert_eq!(a.blinky_positions, b.blinky_positions);
        assert_eq!(a.source_positions, b.source_positions);
        assert_eq!(a.blinky_positions.len() + a.source_positions.len(), 55);
        for p in a.blinky_positions.iter().chain(a.source_positions.iter()) {
            for (axis, &v) in p.iter().enumerate() {
                assert!(v > 0.0 && v < scene.dimensions[axis]);
            }
        }
    }

    #[test]
    fn direct_path_delay_matches_geometry() {
        let scene = RoomScene::default();
        let placement = Placement {
            blinky_positions: vec![[4.0, 1.0, 1.0]],
            source_positions: vec![[1.0, 1.0, 1.0]],
            seed: 0,
        };
        let rirs = compute_rirs(&scene, &placement, 16000).unwrap();
        let rir = rirs.response(0, 0);
        // Geometric oracle: 3 m at 343 m/s and 16 kHz.
        let expected = (3.0 / 343.0 * 16000.0_f64).round() as i64;
        assert_eq!(expected, 140);
        let peak = rir
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0 as i64;
        assert!((peak - expected).abs() <= 2, "peak {peak} vs {expected}");
        assert_eq!(rirs.direct_delay(0, 0) as i64, expected);
    }

    #[test]
    fn direct_path_delay_on_random_placements() {
        let scene = RoomScene::default();
        for seed in 0..20u64 {
            let p = generate_placement(&scene, 1, 1, seed).unwrap();
            let rirs = compute_rirs(&scene, &p, 16000).unwrap();
            let d = distance(&p.source_positions[0], &p.blinky_positions[0]);
            let expected = (d / 343.0 * 16000.0).round() as i64;
            let rir = rirs.response(0, 0);
            let peak = rir
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap()
                .0 as i64;
            assert!(
                (peak - expected).abs() <= 2,
                "seed {seed}: peak {peak} vs {expected}"
            );
        }
    }

    #[test]
    fn full_absorption_leaves_only_direct_path() {
        let scene = RoomScene {
            absorption: 1.0,
            ..RoomScene::default()
        };
        let placement = Placement {
            blinky_positions: vec![[4.0, 2.0, 1.5]],
            source_positions: vec![[2.0, 2.0, 1.5]],
            seed: 0,
        };
        let rirs = compute_rirs(&scene, &placement, 16000).unwrap();
        let rir = rirs.response(0, 0);
        let onset = rirs.direct_delay(0, 0);
        let tw = 128;
        let outside: f64 = rir
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i as i64 - onset as i64).abs() > tw)
            .map(|(_, &v)| (v as f64) * (v as f64))
            .sum();
        let inside: f64 = rir.iter().map(|&v| (v as f64) * (v as f64)).sum();
        assert!(inside > 0.0);
        assert!(outside < 1e-12 * inside, "reflections present: {outside}");
    }

    #[test]
    fn responses_share_common_length() {
        let scene = RoomScene::default();
        let p = generate_placement(&scene, 2, 3, 4).unwrap();
        let rirs = compute_rirs(&scene, &p, 16000).unwrap();
        for class in 0..3 {
            for blinky in 0..2 {
                assert_eq!(rirs.response(class, blinky).len(), rirs.common_length);
            }
        }
    }

    #[test]
    fn reverberant_energy_decreases_with_absorption() {
        let placement = Placement {
            blinky_positions: vec![[6.0, 4.0, 2.0]],
            source_positions: vec![[2.0, 2.0, 1.5]],
            seed: 0,
        };
        let tail_energy = |absorption: f64| -> f64 {
            let scene = RoomScene {
                absorption,
                ..RoomScene::default()
            };
            let rirs = compute_rirs(&scene, &placement, 16000).unwrap();
            let rir = rirs.response(0, 0);
            let onset = rirs.direct_delay(0, 0) + 128;
            rir[onset..].iter().map(|&v| (v as f64) * (v as f64)).sum()
        };
        let e04 = tail_energy(0.4);
        let e09 = tail_energy(0.9);
        assert!(e04 > 0.0, "no reverberation at absorption 0.4");
        assert!(e09 < e04, "tail energy must decrease with absorption");
    }

    #[test]
    fn coincident_positions_are_rejected() {
        let scene = RoomScene::default();
        let placement = Placement {
            blinky_positions: vec![[2.0, 2.0, 2.0]],
            source_positions: vec![[2.0, 2.0, 2.0]],
            seed: 0,
        };
        assert!(compute_rirs(&scene, &placement, 16000).is_err());
    }

    #[test]
    fn propagate_identity_delay_and_linearity() {
        let src = Waveform::new((0..200).map(|i| (i as f32 * 0.1).sin()).collect(), 16000).unwrap();

        let ident = propagate(&src, &[1.0]).unwrap();
        assert_eq!(ident.samples.len(), src.samples.len());
        for (a, b) in ident.samples.iter().zip(src.samples.iter()) {
            assert!((a - b).abs() < 1e-5);
        }

        let mut delayed_rir = vec![0.0f32; 101];
        delayed_rir[100] = 1.0;
        let delayed = propagate(&src, &delayed_rir).unwrap();
        assert_eq!(delayed.samples.len(), src.samples.len() + 100);
        for (i, &s) in src.samples.iter().enumerate() {
            assert!((delayed.samples[i + 100] - s).abs() < 1e-5);
        }
        for &s in &delayed.samples[..100] {
            assert!(s.abs() < 1e-5);
        }

        let rir = [0.5f32, -0.25, 0.1];
        let scaled_src =
            Waveform::new(src.samples.iter().map(|&s| 3.0 * s).collect(), 16000).unwrap();
        let a = propagate(&scaled_src, &rir).unwrap();
        let b = propagate(&src, &rir).unwrap();
        for (x, y) in a.samples.iter().zip(b.samples.iter()) {
            assert!((x - 3.0 * y).abs() < 1e-4);
        }
    }

    #[test]
    fn propagate_rejects_empty_rir() {
        let src = Waveform::new(vec![0.0; 10], 16000).unwrap();
        assert!(propagate(&src, &[]).is_err());
    }

    #[test]
    fn windowed_propagation_has_fixed_length() {
        let src = Waveform::new(vec![1.0; 1000], 16000).unwrap();
        let mut rir = vec![0.0f32; 300];
        rir[140] = 1.0;
        let out = propagate_windowed(&src, &rir, 140, 2000).unwrap();
        assert_eq!(out.samples.len(), 2000);
        assert!((out.samples[0] - 1.0).abs() < 1e-5);
        assert!(out.samples[1500..].iter().all(|&v| v.abs() < 1e-5));
    }

    #[test]
    fn rir_archive_roundtrip() {
        let scene = RoomScene::default();
        let p = generate_placement(&scene, 2, 2, 1).unwrap();
        let rirs = compute_rirs(&scene, &p, 16000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rirs.bin");
        rirs.save(&path).unwrap();
        let loaded = RIRSet::load(&path).unwrap();
        assert_eq!(loaded.common_length, rirs.common_length);
        assert_eq!(loaded.response(1, 0), rirs.response(1, 0));
        assert_eq!(loaded.scene_digest, rirs.scene_digest);
    }
}
