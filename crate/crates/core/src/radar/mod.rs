//! Polar sweep data model, RSEF exchange format, dBZ normalization and
//! polar-to-Cartesian rendering.

mod image;
mod render;
mod sweep;

pub use image::{RadarImage, SegMask};
pub use render::{
    normalize_dbz, pixel_gate_map, render_cartesian, render_cartesian_with, DEFAULT_DBZ_HI,
    DEFAULT_DBZ_LO,
};
pub use sweep::{parse_sweep, write_sweep, PolarSweep, NO_ECHO, RSEF_VERSION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RadarError {
    #[error("bad magic: expected \"RSEF\"")]
    BadMagic,
    #[error("unsupported RSEF version {0}")]
    BadVersion(u8),
    #[error("truncated RSEF data: need {need} bytes, have {have}")]
    TruncatedData { need: usize, have: usize },
    #[error("sweep invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid grid size {0}: must be even and >= 8")]
    InvalidGrid(usize),
    #[error("max range {0} m does not clear the first gate")]
    BadMaxRange(f64),
    #[error("no pixel falls inside radar coverage")]
    EmptyCoverage,
    #[error("degenerate dBZ range: lo {lo} >= hi {hi}")]
    DegenerateRange { lo: f32, hi: f32 },
}
