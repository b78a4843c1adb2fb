//! Reflectivity-band threshold labeling.
//!
//! A pixel is labeled positive when its exact dBZ value lies inside the
//! closed band `[lo, hi]`. The default band of 8 to 16 dBZ marks the
//! reflectivity range expected for birds. Thresholding always reads the raw
//! dBZ carried by the image, never the quantized [0, 1] values, so band
//! membership is never decided by rounding.

use crate::radar::{RadarImage, SegMask, NO_ECHO};
use thiserror::Error;

/// Default band endpoints for bird-scale bioscatter, dBZ.
pub const DEFAULT_BAND_LO: f32 = 8.0;
pub const DEFAULT_BAND_HI: f32 = 16.0;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("degenerate band: lo {lo} > hi {hi}")]
    DegenerateBand { lo: f32, hi: f32 },
}

/// Binary mask of pixels whose dBZ falls in the closed interval `[lo, hi]`.
///
/// Invalid pixels and `NO_ECHO` pixels are always 0.
pub fn threshold_mask(image: &RadarImage, lo: f32, hi: f32) -> Result<SegMask, LabelError> {
    if lo > hi {
        return Err(LabelError::DegenerateBand { lo, hi });
    }
    let n = image.size();
    let mut mask = SegMask::zeros(n);
    let dbz = image.dbz();
    let valid = image.valid();
    for i in 0..n * n {
        if valid[i] && dbz[i] != NO_ECHO && dbz[i] >= lo && dbz[i] <= hi {
            mask.set(i / n, i % n, 1);
        }
    }
    Ok(mask)
}
