//! One radar elevation scan and its on-disk exchange format (RSEF).
//!
//! RSEF layout, little-endian throughout:
//!
//! ```text
//! bytes 0..4   ASCII "RSEF"
//! byte  4      version (1)
//! u32          ray count A
//! u32          gate count G
//! f64          elevation_deg
//! f64          az0_deg
//! f64          first_gate_m
//! f64          gate_spacing_m
//! i64          timestamp (UTC seconds)
//! u16          station_id byte length, then that many UTF-8 bytes
//! f32 × A·G    reflectivity, ray-major (index a·G + g)
//! ```

use super::RadarError;

/// Sentinel for gates that returned no measurable echo.
pub const NO_ECHO: f32 = -9999.0;

/// Current RSEF format version.
pub const RSEF_VERSION: u8 = 1;

const MAGIC: &[u8; 4] = b"RSEF";

/// One radar elevation scan: rays × gates of reflectivity with geometry.
///
/// Rays are uniformly spaced: ray `a` points at azimuth
/// `az0_deg + a * (360 / ray_count)` degrees clockwise from true north.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSweep {
    pub station_id: String,
    /// UTC seconds.
    pub timestamp: i64,
    pub elevation_deg: f64,
    /// Azimuth of ray 0, degrees clockwise from true north, in [0, 360).
    pub az0_deg: f64,
    /// Range of the first gate center, meters.
    pub first_gate_m: f64,
    /// Gate-to-gate spacing, meters.
    pub gate_spacing_m: f64,
    ray_count: usize,
    gate_count: usize,
    /// Ray-major A×G dBZ values; `NO_ECHO` marks empty gates.
    reflectivity: Vec<f32>,
}

impl PolarSweep {
    /// Builds a sweep and checks every type invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        station_id: impl Into<String>,
        timestamp: i64,
        elevation_deg: f64,
        az0_deg: f64,
        first_gate_m: f64,
        gate_spacing_m: f64,
        ray_count: usize,
        gate_count: usize,
        reflectivity: Vec<f32>,
    ) -> Result<Self, RadarError> {
        let sweep = PolarSweep {
            station_id: station_id.into(),
            timestamp,
            elevation_deg,
            az0_deg,
            first_gate_m,
            gate_spacing_m,
            ray_count,
            gate_count,
            reflectivity,
        };
        sweep.validate()?;
        Ok(sweep)
    }

    fn validate(&self) -> Result<(), RadarError> {
        let bad = |msg: String| Err(RadarError::InvariantViolation(msg));
        if self.ray_count == 0 {
            return bad("ray_count must be >= 1".into());
        }
        if self.gate_count == 0 {
            return bad("gate_count must be >= 1".into());
        }
        if !(0.0..=90.0).contains(&self.elevation_deg) {
            return bad(format!("elevation {} outside [0, 90]", self.elevation_deg));
        }
        if !(0.0..360.0).contains(&self.az0_deg) {
            return bad(format!("az0 {} outside [0, 360)", self.az0_deg));
        }
        if !(self.first_gate_m >= 0.0) {
            return bad(format!("first_gate_m {} must be >= 0", self.first_gate_m));
        }
        if !(self.gate_spacing_m > 0.0) {
            return bad(format!(
                "gate_spacing_m {} must be > 0",
                self.gate_spacing_m
            ));
        }
        if self.reflectivity.len() != self.ray_count * self.gate_count {
            return bad(format!(
                "reflectivity length {} != {} rays x {} gates",
                self.reflectivity.len(),
                self.ray_count,
                self.gate_count
            ));
        }
        for (i, &z) in self.reflectivity.iter().enumerate() {
            if z == NO_ECHO {
                continue;
            }
            if !z.is_finite() || !(-40.0..=80.0).contains(&z) {
                return bad(format!("reflectivity[{i}] = {z} outside [-40, 80] dBZ"));
            }
        }
        Ok(())
    }

    pub fn ray_count(&self) -> usize {
        self.ray_count
    }

    pub fn gate_count(&self) -> usize {
        self.gate_count
    }

    pub fn reflectivity(&self) -> &[f32] {
        &self.reflectivity
    }

    /// dBZ at (ray, gate).
    pub fn gate(&self, ray: usize, gate: usize) -> f32 {
        self.reflectivity[ray * self.gate_count + gate]
    }

    /// Azimuthal step between adjacent rays, degrees.
    pub fn ray_step_deg(&self) -> f64 {
        360.0 / self.ray_count as f64
    }

    /// Short identity string used as image provenance.
    pub fn identity(&self) -> String {
        format!(
            "{}@{}:{}",
            self.station_id, self.timestamp, self.elevation_deg
        )
    }
}

/// Serializes a sweep to canonical RSEF bytes. Deterministic: the same sweep
/// always yields identical bytes.
pub fn write_sweep(sweep: &PolarSweep) -> Result<Vec<u8>, RadarError> {
    sweep.validate()?;
    let station = sweep.station_id.as_bytes();
    if station.len() > u16::MAX as usize {
        return Err(RadarError::InvariantViolation(format!(
            "station_id is {} bytes, limit {}",
            station.len(),
            u16::MAX
        )));
    }
    let mut out = Vec::with_capacity(55 + station.len() + sweep.reflectivity.len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(RSEF_VERSION);
    out.extend_from_slice(&(sweep.ray_count as u32).to_le_bytes());
    out.extend_from_slice(&(sweep.gate_count as u32).to_le_bytes());
    out.extend_from_slice(&sweep.elevation_deg.to_le_bytes());
    out.extend_from_slice(&sweep.az0_deg.to_le_bytes());
    out.extend_from_slice(&sweep.first_gate_m.to_le_bytes());
    out.extend_from_slice(&sweep.gate_spacing_m.to_le_bytes());
    out.extend_from_slice(&sweep.timestamp.to_le_bytes());
    out.extend_from_slice(&(station.len() as u16).to_le_bytes());
    out.extend_from_slice(station);
    for z in &sweep.reflectivity {
        out.extend_from_slice(&z.to_le_bytes());
    }
    Ok(out)
}

/// Parses RSEF bytes. Exact inverse of [`write_sweep`] on valid inputs.
pub fn parse_sweep(bytes: &[u8]) -> Result<PolarSweep, RadarError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(RadarError::BadMagic);
    }
    let version = r.take(1)?[0];
    if version != RSEF_VERSION {
        return Err(RadarError::BadVersion(version));
    }
    let ray_count = r.u32()? as usize;
    let gate_count = r.u32()? as usize;
    let elevation_deg = r.f64()?;
    let az0_deg = r.f64()?;
    let first_gate_m = r.f64()?;
    let gate_spacing_m = r.f64()?;
    let timestamp = r.i64()?;
    let station_len = r.u16()? as usize;
    let station_bytes = r.take(station_len)?;
    let station_id = std::str::from_utf8(station_bytes)
        .map_err(|_| RadarError::InvariantViolation("station_id is not UTF-8".into()))?
        .to_string();
    let n = ray_count
        .checked_mul(gate_count)
        .ok_or_else(|| RadarError::InvariantViolation("ray_count * gate_count overflows".into()))?;
    let mut reflectivity = Vec::with_capacity(n);
    for _ in 0..n {
        reflectivity.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
    }
    if r.pos != bytes.len() {
        return Err(RadarError::InvariantViolation(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }
    PolarSweep::new(
        station_id,
        timestamp,
        elevation_deg,
        az0_deg,
        first_gate_m,
        gate_spacing_m,
        ray_count,
        gate_count,
        reflectivity,
    )
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RadarError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(RadarError::TruncatedData {
                need: self.pos.saturating_add(n),
                have: self.buf.len(),
            }),
        }
    }

    fn u16(&mut self) -> Result<u16, RadarError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, RadarError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, RadarError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, RadarError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> PolarSweep {
        PolarSweep::new("BERR", 1_555_000_000, 0.5, 0.0, 0.0, 1000.0, 1, 1, vec![10.0]).unwrap()
    }

    #[test]
    fn minimal_sweep_parses_back() {
        let bytes = write_sweep(&minimal()).unwrap();
        let sweep = parse_sweep(&bytes).unwrap();
        assert_eq!(sweep.ray_count(), 1);
        assert_eq!(sweep.gate_count(), 1);
        assert_eq!(sweep.reflectivity(), &[10.0]);
        assert_eq!(sweep, minimal());
    }

    #[test]
    fn minimal_sweep_byte_length_is_header_plus_payload() {
        let bytes = write_sweep(&minimal()).unwrap();
        // 55 fixed header bytes + 4-byte station id + one 4-byte value.
        assert_eq!(bytes.len(), 55 + 4 + 4);
    }

    #[test]
    fn write_is_deterministic() {
        assert_eq!(write_sweep(&minimal()).unwrap(), write_sweep(&minimal()).unwrap());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = write_sweep(&minimal()).unwrap();
        bytes[3] = b'X'; // "RSEX"
        assert!(matches!(parse_sweep(&bytes), Err(RadarError::BadMagic)));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = write_sweep(&minimal()).unwrap();
        bytes[4] = 9;
        assert!(matches!(parse_sweep(&bytes), Err(RadarError::BadVersion(9))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = write_sweep(&minimal()).unwrap();
        let cut = &bytes[..bytes.len() - 2];
        assert!(matches!(
            parse_sweep(cut),
            Err(RadarError::TruncatedData { .. })
        ));
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let err = PolarSweep::new("X", 0, 0.5, 0.0, 0.0, 0.0, 1, 1, vec![1.0]);
        assert!(matches!(err, Err(RadarError::InvariantViolation(_))));
        let err = PolarSweep::new("X", 0, 91.0, 0.0, 0.0, 1.0, 1, 1, vec![1.0]);
        assert!(matches!(err, Err(RadarError::InvariantViolation(_))));
        let err = PolarSweep::new("X", 0, 0.5, 0.0, 0.0, 1.0, 1, 1, vec![99.0]);
        assert!(matches!(err, Err(RadarError::InvariantViolation(_))));
    }

    #[test]
    fn no_echo_sentinel_is_allowed() {
        let s = PolarSweep::new("X", 0, 0.5, 0.0, 0.0, 1.0, 1, 2, vec![NO_ECHO, 5.0]).unwrap();
        assert_eq!(s.gate(0, 0), NO_ECHO);
    }
}
