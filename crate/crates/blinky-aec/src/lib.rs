//! Simulation framework for acoustic event classification (AEC) over a
//! bandwidth-limited LED-to-camera optical channel.
//!
//! Sound-to-light sensors ("Blinkies") record audio in a simulated room,
//! compress it into an embedding, and emit it as LED intensity. A camera
//! samples the LEDs at its frame rate, and a fusion-center classifier
//! predicts the acoustic event class from the received signals.
//!
//! The crate covers the full pipeline:
//!
//! - [`dataset`]: ESC-50 style corpus ingestion, deterministic splits and
//!   waveform conditioning.
//! - [`dsp`]: log-Mel front-end and the non-learned sound-power embedding.
//! - [`acoustics`]: image-source room simulation and signal propagation.
//! - [`channel`]: the optical link (distortion, camera resampling,
//!   clipping) plus a differentiable variant for end-to-end training.
//! - [`models`]: the lightweight encoder/decoder pair and the ResNet-18
//!   downstream classifier.
//! - [`training`]: autoencoder pre-training (plain and noise-robust),
//!   BC-learning classifier training, checkpoint selection.
//! - [`experiment`]: scenario-matrix runner, macro-F1 metrics, reports
//!   and persistence.
//! - [`synth`]: a deterministic synthetic corpus generator in the ESC-50
//!   layout, for self-contained runs when the real corpus is absent.

pub mod acoustics;
pub mod channel;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod models;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

/// Environment variable overriding the corpus root directory.
pub const ENV_DATA_ROOT: &str = "BLINKY_AEC_DATA_ROOT";
/// Environment variable enabling strict-deterministic execution ("1").
pub const ENV_STRICT_DETERMINISM: &str = "BLINKY_AEC_STRICT_DETERMINISM";

/// Apply process-wide determinism settings when strict mode is requested.
///
/// Under strict mode all intra-op parallelism in the tensor backend is
/// disabled so that reductions run in a fixed order and repeated runs are
/// bit-identical.
pub fn apply_strict_determinism_from_env() -> bool {
    let strict = std::env::var(ENV_STRICT_DETERMINISM)
        .map(|v| v == "1" || v.eq_ignore_ascii_case("true"))
        .unwrap_or(false);
    if strict {
        tch::set_num_threads(1);
        tch::set_num_interop_threads(1);
    }
    strict
}
