//! Human-to-non-human voice conversion.
//!
//! The crate covers the 44.1 kHz feature pipeline ([`dsp`], [`perturbation`],
//! [`linguistic`]), the conditional VAE generator with a style-conditioned
//! flow prior and its discriminator ([`model`]), the training objective
//! ([`losses`]) and loop ([`training`]), conversion ([`conversion`]) and the
//! energy-contour metrics ([`evaluation`]).

pub mod cache;
pub mod config;
pub mod container;
pub mod conversion;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod linguistic;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod perturbation;
pub mod training;

pub use config::RunConfig;
pub use conversion::{ConversionRequest, Converter};
pub use dsp::{AudioClip, Category, StftConfig};
pub use error::{Error, Result};
pub use evaluation::{EvalPair, EvalReport};
pub use features::ClipFeatures;
pub use model::{ModelConfig, StyleVector, VcModel};
pub use training::{TrainConfig, TrainState};
