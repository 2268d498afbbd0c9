//! The LED-to-camera optical link.
//!
//! `Transmit = Resample ∘ Distort`. Distortion is the affine-plus-Gaussian
//! model `a·z + b·1 + ε`, ε ~ N(0, σ²I). Resampling holds each symbol for
//! its full period (zero-order hold), samples it at the camera frame rate
//! and clips to the sensor's [0, 1] dynamic range.
//!
//! A camera at frame rate `F_s` carries `F_s/2` symbols per second per
//! LED, so a device with `n_led` LEDs and a window of `T` seconds carries
//! `L = (F_s/2)·n_led·T` independent symbols.
//!
//! [`DifferentiableChannel`] mirrors the same arithmetic on tensors so the
//! end-to-end baseline can backpropagate through the link; the hard clip
//! uses its pass-through subgradient (identity inside [0, 1], zero
//! outside).

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use tch::{Device, Kind, Tensor};

use crate::error::{Error, Result};

/// Counts invocations of the channel operators; lets experiments assert
/// that channel-free modes never touch the link.
static INVOCATIONS: AtomicU64 = AtomicU64::new(0);

pub fn invocation_count() -> u64 {
    INVOCATIONS.load(Ordering::Relaxed)
}

pub fn reset_invocation_count() {
    INVOCATIONS.store(0, Ordering::Relaxed);
}

/// Optical distortion parameters of the link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Attenuation coefficient.
    pub a: f32,
    /// Ambient light bias.
    pub b: f32,
    /// Additive white Gaussian noise standard deviation.
    pub sigma: f32,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            a: 1.0,
            b: 0.1,
            sigma: 0.05,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 {
            return Err(Error::InvalidArgument("sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Camera-side geometry of the link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    /// Frame rate F_s in Hz.
    pub frame_rate: f64,
    /// LEDs per Blinky.
    pub n_led: usize,
    /// Observation window T in seconds.
    pub window: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            frame_rate: 30.0,
            n_led: 4,
            window: 5.0,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_rate <= 0.0 || self.n_led == 0 || self.window <= 0.0 {
            return Err(Error::InvalidArgument(
                "camera config requires frame_rate > 0, n_led >= 1, window > 0".into(),
            ));
        }
        Ok(())
    }

    /// Camera frames per observation window.
    pub fn frames(&self) -> usize {
        (self.frame_rate * self.window).floor() as usize
    }
}

/// Number of independent symbols the channel carries per window:
/// per-LED Nyquist rate × LED count × window length, floored.
pub fn latent_capacity(cam: &CameraConfig) -> usize {
    (cam.frame_rate / 2.0 * cam.n_led as f64 * cam.window).floor() as usize
}

/// Camera-received signal: `n_led` rows × ⌊F_s·T⌋ columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedFrameGrid {
    values: Vec<f32>,
    pub n_led: usize,
    pub frames: usize,
    pub clipped: bool,
}

impl LedFrameGrid {
    pub fn at(&self, led: usize, frame: usize) -> f32 {
        self.values[led * self.frames + frame]
    }

    /// Row-major `(led, frame)` backing storage.
    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// How a transmitted vector maps onto the LEDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LedMapping {
    /// Contiguous blocks: entries 0..L/n go to LED 0, the next block to
    /// LED 1, and so on. Used for latent vectors sized to the capacity.
    Split,
    /// Exposure-integrating decimation of a full-rate envelope: each
    /// camera frame averages its sample interval, and the single
    /// resulting stream is replicated across all LEDs.
    Replicate,
}

/// Transmission scenario of an experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// No degradation: the embedding passes through unchanged.
    None,
    /// Camera resampling only, no optical distortion.
    Resample,
    /// Resampling preceded by optical distortion.
    Full,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Scenario::None),
            "resample" => Ok(Scenario::Resample),
            "full" => Ok(Scenario::Full),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario `{other}` (expected none|resample|full)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::None => "none",
            Scenario::Resample => "resample",
            Scenario::Full => "full",
        }
    }
}

/// Seeded Gaussian noise, shared by the standard and differentiable paths.
pub fn gaussian_noise(len: usize, sigma: f32, seed: u64) -> Vec<f32> {
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let e: f32 = StandardNormal.sample(&mut rng);
            sigma * e
        })
        .collect()
}

/// `a·z + b·1 + ε` with ε ~ N(0, σ²I), deterministic under `seed`.
pub fn distort(z: &[f32], p: &ChannelParams, seed: u64) -> Vec<f32> {
    INVOCATIONS.fetch_add(1, Ordering::Relaxed);
    let eps = gaussian_noise(z.len(), p.sigma, seed);
    z.iter()
        .zip(eps.iter())
        .map(|(&v, &e)| v * p.a + p.b + e)
        .collect()
}

/// Zero-order-hold resampling of a transmitted vector onto the camera
/// frame grid, clipped to [0, 1].
pub fn resample_to_camera(
    z: &[f32],
    cam: &CameraConfig,
    mapping: LedMapping,
) -> Result<LedFrameGrid> {
    INVOCATIONS.fetch_add(1, Ordering::Relaxed);
    cam.validate()?;
    if z.is_empty() {
        return Err(Error::InvalidArgument("empty transmitted vector".into()));
    }
    let frames = cam.frames();
    let span = cam.frame_rate * cam.window;
    let mut values = vec![0.0f32; cam.n_led * frames];

    match mapping {
        LedMapping::Split => {
            // Zero-pad to the next multiple of n_led, then hold each
            // symbol for its full period on its LED.
            let per_led = z.len().div_ceil(cam.n_led);
            for led in 0..cam.n_led {
                for f in 0..frames {
                    let sym = ((f as f64) * per_led as f64 / span).floor() as usize;
                    let sym = sym.min(per_led - 1);
                    let idx = led * per_led + sym;
                    let raw = if idx < z.len() { z[idx] } else { 0.0 };
                    values[led * frames + f] = raw.clamp(0.0, 1.0);
                }
            }
        }
        LedMapping::Replicate => {
            let n = z.len();
            for f in 0..frames {
                let start = (f as f64 * n as f64 / frames as f64).floor() as usize;
                let end = (((f + 1) as f64) * n as f64 / frames as f64).floor() as usize;
                let end = end.max(start + 1).min(n);
                let start = start.min(n - 1);
                let mean =
                    z[start..end].iter().map(|&v| v as f64).sum::<f64>() / (end - start) as f64;
                let v = (mean as f32).clamp(0.0, 1.0);
                for led in 0..cam.n_led {
                    values[led * frames + f] = v;
                }
            }
        }
    }

    Ok(LedFrameGrid {
        values,
        n_led: cam.n_led,
        frames,
        clipped: true,
    })
}

/// Output of [`transmit`]: either the untouched vector or a camera grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Transmitted {
    Vector(Vec<f32>),
    Grid(LedFrameGrid),
}

impl Transmitted {
    pub fn as_flat(&self) -> &[f32] {
        match self {
            Transmitted::Vector(v) => v,
            Transmitted::Grid(g) => g.values(),
        }
    }
}

/// Apply the configured transmission scenario to an embedding.
pub fn transmit(
    z: &[f32],
    scenario: Scenario,
    p: &ChannelParams,
    cam: &CameraConfig,
    mapping: LedMapping,
    seed: u64,
) -> Result<Transmitted> {
    INVOCATIONS.fetch_add(1, Ordering::Relaxed);
    p.validate()?;
    match scenario {
        Scenario::None => Ok(Transmitted::Vector(z.to_vec())),
        Scenario::Resample => Ok(Transmitted::Grid(resample_to_camera(z, cam, mapping)?)),
        Scenario::Full => {
            let distorted = distort(z, p, seed);
            Ok(Transmitted::Grid(resample_to_camera(&distorted, cam, mapping)?))
        }
    }
}

/// Tensor-path mirror of the channel for the end-to-end baseline.
///
/// Produces outputs numerically equal to the standard path for identical
/// seeds and supports autograd through distortion, the zero-order hold
/// and the clip.
pub struct DifferentiableChannel {
    pub params: ChannelParams,
    pub cam: CameraConfig,
    /// Symbols per LED the gather index was built for.
    per_led: usize,
    /// Frame → symbol gather index, precomputed once.
    frame_index: Tensor,
}

impl DifferentiableChannel {
    pub fn new(params: ChannelParams, cam: CameraConfig) -> Result<Self> {
        cam.validate()?;
        params.validate()?;
        let frames = cam.frames();
        let per_led = latent_capacity(&cam).div_ceil(cam.n_led);
        let span = cam.frame_rate * cam.window;
        let idx: Vec<i64> = (0..frames)
            .map(|f| (((f as f64) * per_led as f64 / span).floor() as i64).min(per_led as i64 - 1))
            .collect();
        Ok(DifferentiableChannel {
            params,
            cam,
            per_led,
            frame_index: Tensor::from_slice(&idx),
        })
    }

    /// Transmit a batch of latent vectors, shape `(batch, L)`.
    ///
    /// Returns `(batch, L)` for [`Scenario::None`] and
    /// `(batch, n_led, frames)` otherwise.
    pub fn transmit(&self, z: &Tensor, scenario: Scenario, seed: u64) -> Result<Tensor> {
        INVOCATIONS.fetch_add(1, Ordering::Relaxed);
        let (batch, latent) = match z.size().as_slice() {
            [b, l] => (*b, *l),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "expected (batch, L) latent batch, got {other:?}"
                )))
            }
        };
        let kind = z.kind();
        match scenario {
            Scenario::None => Ok(z.shallow_clone()),
            Scenario::Resample => self.resample(z, batch, latent),
            Scenario::Full => {
                let distorted = self.distort(z, batch, latent, kind, seed);
                self.resample(&distorted, batch, latent)
            }
        }
    }

    fn distort(&self, z: &Tensor, batch: i64, latent: i64, kind: Kind, seed: u64) -> Tensor {
        let noise = gaussian_noise((batch * latent) as usize, self.params.sigma, seed);
        let eps = Tensor::from_slice(&noise)
            .to_kind(kind)
            .reshape([batch, latent]);
        z * self.params.a as f64 + self.params.b as f64 + eps
    }

    fn resample(&self, z: &Tensor, batch: i64, latent: i64) -> Result<Tensor> {
        let n_led = self.cam.n_led as i64;
        let per_led = (latent as usize).div_ceil(self.cam.n_led);
        if per_led != self.per_led {
            return Err(Error::ShapeMismatch(format!(
                "latent width {latent} does not match the configured capacity {}",
                latent_capacity(&self.cam)
            )));
        }
        let per_led = per_led as i64;
        let padded = if per_led * n_led == latent {
            z.shallow_clone()
        } else {
            let pad = per_led * n_led - latent;
            let zeros = Tensor::zeros([batch, pad], (z.kind(), Device::Cpu));
            Tensor::cat(&[z.shallow_clone(), zeros], 1)
        };
        let streams = padded.reshape([batch, n_led, per_led]);
        let held = streams.index_select(2, &self.frame_index);
        Ok(held.clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_formula() {
        let cam = CameraConfig::default();
        assert_eq!(latent_capacity(&cam), 300);
        assert_eq!(
            latent_capacity(&CameraConfig {
                n_led: 1,
                ..CameraConfig::default()
            }),
            75
        );
        assert_eq!(
            latent_capacity(&CameraConfig {
                frame_rate: 60.0,
                ..CameraConfig::default()
            }),
            600
        );
    }

    #[test]
    fn distort_noiseless_cases() {
        let p = ChannelParams {
            a: 1.0,
            b: 0.1,
            sigma: 0.0,
        };
        let out = distort(&[0.5, 0.5], &p, 0);
        assert!((out[0] - 0.6).abs() < 1e-7 && (out[1] - 0.6).abs() < 1e-7);

        let p = ChannelParams {
            a: 0.0,
            b: 0.25,
            sigma: 0.0,
        };
        let out = distort(&[1.0, -3.0, 7.0], &p, 9);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn distort_noise_statistics() {
        let p = ChannelParams {
            a: 1.0,
            b: 0.1,
            sigma: 0.05,
        };
        let n = 100_000;
        let z = vec![0.3f32; n];
        let out = distort(&z, &p, 7);
        let residuals: Vec<f64> = out
            .iter()
            .zip(z.iter())
            .map(|(&o, &v)| (o - (v * p.a + p.b)) as f64)
            .collect();
        let mean = residuals.iter().sum::<f64>() / n as f64;
        let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 6e-4, "mean {mean}");
        let target = 0.0025;
        assert!(
            (var - target).abs() < 0.05 * target,
            "variance {var} vs {target}"
        );
    }

    #[test]
    fn distort_deterministic_under_seed() {
        let p = ChannelParams::default();
        let z: Vec<f32> = (0..64).map(|i| i as f32 / 64.0).collect();
        assert_eq!(distort(&z, &p, 42), distort(&z, &p, 42));
        assert_ne!(distort(&z, &p, 42), distort(&z, &p, 43));
    }

    #[test]
    fn resample_shapes_and_hold() {
        let cam = CameraConfig::default();
        let z = vec![0.5f32; 300];
        let g = resample_to_camera(&z, &cam, LedMapping::Split).unwrap();
        assert_eq!(g.n_led, 4);
        assert_eq!(g.frames, 150);

        // Two symbols at half the camera rate: each sampled twice.
        let cam2 = CameraConfig {
            frame_rate: 4.0,
            n_led: 1,
            window: 1.0,
        };
        let g = resample_to_camera(&[0.25, 0.75], &cam2, LedMapping::Split).unwrap();
        assert_eq!(g.values(), &[0.25, 0.25, 0.75, 0.75]);
    }

    #[test]
    fn resample_clips_to_unit_interval() {
        let cam = CameraConfig {
            frame_rate: 4.0,
            n_led: 1,
            window: 1.0,
        };
        let g = resample_to_camera(&[1.2, -0.4], &cam, LedMapping::Split).unwrap();
        assert_eq!(g.values(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn resample_pads_non_divisible_latents() {
        let cam = CameraConfig {
            frame_rate: 4.0,
            n_led: 2,
            window: 1.0,
        };
        // 3 entries on 2 LEDs: padded to 4, LED 1 ends with the pad zero.
        let g = resample_to_camera(&[0.5, 0.6, 0.7], &cam, LedMapping::Split).unwrap();
        assert_eq!(g.at(0, 0), 0.5);
        assert_eq!(g.at(0, 3), 0.6);
        assert_eq!(g.at(1, 0), 0.7);
        assert_eq!(g.at(1, 3), 0.0);
    }

    #[test]
    fn replicate_mapping_averages_frame_intervals() {
        let cam = CameraConfig {
            frame_rate: 2.0,
            n_led: 3,
            window: 1.0,
        };
        // 4 samples, 2 frames: means are (0.0+0.2)/2 and (0.4+0.6)/2.
        let g = resample_to_camera(&[0.0, 0.2, 0.4, 0.6], &cam, LedMapping::Replicate).unwrap();
        for led in 0..3 {
            assert!((g.at(led, 0) - 0.1).abs() < 1e-7);
            assert!((g.at(led, 1) - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn transmit_scenarios() {
        let p = ChannelParams::default();
        let cam = CameraConfig::default();
        let z: Vec<f32> = (0..300).map(|i| (i as f32 / 299.0) * 0.8 + 0.1).collect();

        match transmit(&z, Scenario::None, &p, &cam, LedMapping::Split, 1).unwrap() {
            Transmitted::Vector(v) => assert_eq!(v, z),
            _ => panic!("scenario none must pass the vector through"),
        }

        let a = transmit(&z, Scenario::Resample, &p, &cam, LedMapping::Split, 1).unwrap();
        let b = transmit(&z, Scenario::Resample, &p, &cam, LedMapping::Split, 2).unwrap();
        assert_eq!(a, b, "resample-only must not depend on the seed");
        match a {
            Transmitted::Grid(g) => {
                assert_eq!(g.n_led, 4);
                assert_eq!(g.frames, 150);
            }
            _ => panic!("resample must produce a grid"),
        }

        let degenerate = ChannelParams {
            a: 1.0,
            b: 0.0,
            sigma: 0.0,
        };
        let full = transmit(&z, Scenario::Full, &degenerate, &cam, LedMapping::Split, 5).unwrap();
        let resampled =
            transmit(&z, Scenario::Resample, &degenerate, &cam, LedMapping::Split, 5).unwrap();
        assert_eq!(full, resampled);
    }

    #[test]
    fn transmit_grid_values_always_in_unit_interval() {
        let p = ChannelParams {
            a: 1.0,
            b: 0.5,
            sigma: 0.3,
        };
        let cam = CameraConfig::default();
        let z: Vec<f32> = (0..300).map(|i| (i % 7) as f32 / 3.0 - 0.5).collect();
        for seed in 0..5 {
            let out = transmit(&z, Scenario::Full, &p, &cam, LedMapping::Split, seed).unwrap();
            match out {
                Transmitted::Grid(g) => {
                    assert!(g.values().iter().all(|&v| (0.0..=1.0).contains(&v)))
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn differentiable_path_matches_standard_path() {
        let p = ChannelParams::default();
        let cam = CameraConfig::default();
        let diff = DifferentiableChannel::new(p, cam).unwrap();
        let z: Vec<f32> = (0..300).map(|i| ((i * 37) % 100) as f32 / 100.0).collect();

        for (scenario, seed) in [
            (Scenario::Resample, 0u64),
            (Scenario::Full, 11),
            (Scenario::Full, 12),
        ] {
            let std_out = transmit(&z, scenario, &p, &cam, LedMapping::Split, seed).unwrap();
            let zt = Tensor::from_slice(&z).reshape([1, 300]);
            let diff_out = diff.transmit(&zt, scenario, seed).unwrap();
            let flat: Vec<f32> = diff_out.reshape(-1).try_into().unwrap();
            let expected = std_out.as_flat();
            assert_eq!(flat.len(), expected.len());
            for (i, (a, b)) in flat.iter().zip(expected.iter()).enumerate() {
                assert!(
                    (a - b).abs() <= 1e-7,
                    "mismatch at {i}: {a} vs {b} ({scenario:?})"
                );
            }
        }
    }

    #[test]
    fn differentiable_gradients_match_finite_differences() {
        // f64 path, inputs kept away from the clip boundaries.
        let p = ChannelParams {
            a: 0.9,
            b: 0.1,
            sigma: 0.02,
        };
        let cam = CameraConfig {
            frame_rate: 6.0,
            n_led: 2,
            window: 1.0,
        };
        let diff = DifferentiableChannel::new(p, cam).unwrap();
        let l = latent_capacity(&cam); // 6
        let base: Vec<f64> = (0..l).map(|i| 0.25 + 0.08 * i as f64).collect();

        let weights = Tensor::from_slice(
            &(0..cam.frames() * cam.n_led)
                .map(|i| 0.5 + (i as f64) * 0.13)
                .collect::<Vec<f64>>(),
        )
        .reshape([1, cam.n_led as i64, cam.frames() as i64]);

        let loss_of = |z: &Tensor| -> Tensor {
            let out = diff.transmit(z, Scenario::Full, 3).unwrap();
            (out * &weights).sum(Kind::Double)
        };

        let z = Tensor::from_slice(&base)
            .reshape([1, l as i64])
            .set_requires_grad(true);
        let loss = loss_of(&z);
        loss.backward();
        let grad: Vec<f64> = z.grad().reshape(-1).try_into().unwrap();

        let h = 1e-6;
        for i in 0..l {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let lp = f64::try_from(loss_of(&Tensor::from_slice(&plus).reshape([1, l as i64])))
                .unwrap();
            let lm = f64::try_from(loss_of(&Tensor::from_slice(&minus).reshape([1, l as i64])))
                .unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-9);
            assert!(rel < 1e-4, "grad[{i}]={} fd={fd} rel={rel}", grad[i]);
        }
    }

    #[test]
    fn invocation_counter_tracks_channel_use() {
        reset_invocation_count();
        assert_eq!(invocation_count(), 0);
        let _ = distort(&[0.0], &ChannelParams::default(), 0);
        assert!(invocation_count() > 0);
        reset_invocation_count();
        assert_eq!(invocation_count(), 0);
    }
}
