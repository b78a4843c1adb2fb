//! Weather-radar bioscatter segmentation pipeline.
//!
//! The crate covers the full chain from polar reflectivity sweeps to
//! evaluated segmentation masks:
//!
//! - [`radar`] — polar sweep model, the RSEF exchange format, dBZ
//!   normalization and polar-to-Cartesian rendering
//! - [`synth`] — seeded synthetic sweeps with ground-truth bioscatter masks
//! - [`label`] — reflectivity-band threshold labeling (noisy labels)
//! - [`autodiff`] — minimal reverse-mode tensor core (conv, pool, bce, Adam)
//! - [`unet`] — encoder/decoder segmentation network built on `autodiff`
//! - [`train`] — pretraining, fine-tuning and supervised training loops
//! - [`metrics`] — pixel confusion counts, precision/recall/dice reports
//! - [`io`] — PGM images, WRCK checkpoints, line-based run configuration
//!
//! Everything is deterministic: all randomness flows from explicit 64-bit
//! seeds and identical inputs produce bit-identical outputs.

pub mod autodiff;
pub mod io;
pub mod label;
pub mod metrics;
pub mod radar;
pub mod rng;
pub mod synth;
pub mod train;
pub mod unet;
