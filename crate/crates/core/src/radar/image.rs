//! Cartesian reflectivity images and binary segmentation masks.

use super::sweep::NO_ECHO;
use super::RadarError;

/// N×N Cartesian reflectivity image.
///
/// Pixel values are normalized to [0, 1] by the affine dBZ mapping
/// `(dbz_lo, dbz_hi)`. The raw dBZ value of every pixel is carried alongside
/// so that band thresholding never works on quantized values. Pixels outside
/// radar coverage have `valid = false` and value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarImage {
    size: usize,
    values: Vec<f32>,
    dbz: Vec<f32>,
    valid: Vec<bool>,
    dbz_lo: f32,
    dbz_hi: f32,
    source: String,
}

impl RadarImage {
    pub(crate) fn from_parts(
        size: usize,
        values: Vec<f32>,
        dbz: Vec<f32>,
        valid: Vec<bool>,
        dbz_lo: f32,
        dbz_hi: f32,
        source: String,
    ) -> Self {
        debug_assert_eq!(values.len(), size * size);
        debug_assert_eq!(dbz.len(), size * size);
        debug_assert_eq!(valid.len(), size * size);
        RadarImage {
            size,
            values,
            dbz,
            valid,
            dbz_lo,
            dbz_hi,
            source,
        }
    }

    /// Builds an image directly from raw per-pixel dBZ values, normalizing
    /// them with the given mapping. `NO_ECHO` entries become value 0.
    pub fn from_dbz(
        size: usize,
        dbz: Vec<f32>,
        valid: Vec<bool>,
        dbz_lo: f32,
        dbz_hi: f32,
        source: impl Into<String>,
    ) -> Result<Self, RadarError> {
        if dbz_lo >= dbz_hi {
            return Err(RadarError::DegenerateRange {
                lo: dbz_lo,
                hi: dbz_hi,
            });
        }
        if dbz.len() != size * size || valid.len() != size * size {
            return Err(RadarError::InvariantViolation(format!(
                "image buffers must hold {}x{} pixels",
                size, size
            )));
        }
        let span = dbz_hi - dbz_lo;
        let values = dbz
            .iter()
            .zip(&valid)
            .map(|(&z, &ok)| {
                if !ok || z == NO_ECHO {
                    0.0
                } else {
                    ((z - dbz_lo) / span).clamp(0.0, 1.0)
                }
            })
            .collect();
        Ok(RadarImage::from_parts(
            size,
            values,
            dbz,
            valid,
            dbz_lo,
            dbz_hi,
            source.into(),
        ))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Normalized [0, 1] values, row-major.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Raw dBZ values, row-major; `NO_ECHO` where no echo was resolved.
    pub fn dbz(&self) -> &[f32] {
        &self.dbz
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn dbz_lo(&self) -> f32 {
        self.dbz_lo
    }

    pub fn dbz_hi(&self) -> f32 {
        self.dbz_hi
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn value_at(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.size + col]
    }

    pub fn dbz_at(&self, row: usize, col: usize) -> f32 {
        self.dbz[row * self.size + col]
    }

    pub fn valid_at(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.size + col]
    }
}

/// N×N binary segmentation map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    size: usize,
    bits: Vec<u8>,
}

impl SegMask {
    pub fn zeros(size: usize) -> Self {
        SegMask {
            size,
            bits: vec![0; size * size],
        }
    }

    /// Wraps existing bits; every entry must be 0 or 1.
    pub fn from_bits(size: usize, bits: Vec<u8>) -> Result<Self, RadarError> {
        if bits.len() != size * size {
            return Err(RadarError::InvariantViolation(format!(
                "mask needs {}x{} bits, got {}",
                size,
                size,
                bits.len()
            )));
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(RadarError::InvariantViolation(format!(
                "mask bit {bad} is not binary"
            )));
        }
        Ok(SegMask { size, bits })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, bit: u8) {
        debug_assert!(bit <= 1);
        self.bits[row * self.size + col] = bit;
    }

    /// Number of positive pixels.
    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_dbz_normalizes_and_zeroes_invalid() {
        let dbz = vec![-10.0, 60.0, 25.0, NO_ECHO];
        let valid = vec![true, true, false, true];
        let img = RadarImage::from_dbz(2, dbz, valid, -10.0, 60.0, "t").unwrap();
        assert_eq!(img.values(), &[0.0, 1.0, 0.0, 0.0]);
        assert!(!img.valid_at(1, 0));
    }

    #[test]
    fn degenerate_range_is_rejected() {
        let err = RadarImage::from_dbz(1, vec![0.0], vec![true], 5.0, 5.0, "t");
        assert!(matches!(err, Err(RadarError::DegenerateRange { .. })));
    }

    #[test]
    fn mask_rejects_non_binary_bits() {
        assert!(SegMask::from_bits(1, vec![2]).is_err());
        assert!(SegMask::from_bits(2, vec![0, 1, 1, 0]).is_ok());
    }
}
