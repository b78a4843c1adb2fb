//! Minimal reverse-mode differentiable tensor core.
//!
//! Exactly the operations a U-Net and its training loop need: stride-1
//! convolution (same/valid padding), stride-2 transposed convolution, 2×2
//! max pooling, relu/sigmoid, channel concatenation, masked binary
//! cross-entropy with logits, reverse-mode [`Tape::backward`], an Adam step
//! and a finite-difference gradient checker.
//!
//! A [`Tape`] is built in one precision — `Tape<f32>` for training,
//! `Tape<f64>` for gradient checks — and precisions are never mixed within
//! one graph.

mod adam;
mod gradcheck;
mod real;
mod tape;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{check_scalar_fn, op_check, rel_err, CheckOutcome, OpKind};
pub use real::Real;
pub use tape::{Padding, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("2x2 pooling needs even spatial dims, got {h}x{w}")]
    OddSpatialDims { h: usize, w: usize },
    #[error("loss has no valid pixels")]
    NoValidPixels,
    #[error("backward needs a scalar loss, got {0} elements")]
    NonScalarLoss(usize),
}
