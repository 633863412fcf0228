//! Reconstruction-based adversarial example detection in pixel and
//! frequency domains, plus the black-box adversarial detection (BAD)
//! evaluation protocol.
//!
//! The pipeline: variational autoencoders capture normal-example
//! representations (raw pixels, or DFT amplitude/phase spectra); layer
//! activations of an image before and after reconstruction give a
//! reconstruction-error feature; a small MLP over those features separates
//! clean, noisy, and adversarial inputs. The harness trains detectors on
//! white-box attacks from a victim model and evaluates them on transfer
//! attacks from single and ensemble threat models.
//!
//! See the crate examples for one runnable program per capability, and the
//! `badlab` binary for the subcommand surface.

pub mod error;
pub mod tensor;

pub mod attack;
pub mod ckpt;
pub mod freq;
pub mod models;
pub mod nn;
pub mod recon;

pub use error::{Error, Result};
pub use tensor::{ImageBatch, Labels, ReconVariant};
