//! Polar-to-Cartesian rendering and dBZ normalization.

use super::image::RadarImage;
use super::sweep::{PolarSweep, NO_ECHO};
use super::RadarError;

/// Default display span endpoints, dBZ.
pub const DEFAULT_DBZ_LO: f32 = -10.0;
pub const DEFAULT_DBZ_HI: f32 = 60.0;

/// Affine map of `z` into [0, 1] over `[dbz_lo, dbz_hi]`, clamped at the
/// endpoints. `NO_ECHO` maps to 0.
pub fn normalize_dbz(z: f32, dbz_lo: f32, dbz_hi: f32) -> Result<f32, RadarError> {
    if dbz_lo >= dbz_hi {
        return Err(RadarError::DegenerateRange {
            lo: dbz_lo,
            hi: dbz_hi,
        });
    }
    if z == NO_ECHO {
        return Ok(0.0);
    }
    Ok(((z - dbz_lo) / (dbz_hi - dbz_lo)).clamp(0.0, 1.0))
}

/// Nearest (ray, gate) sample for every pixel of an N×N grid spanning
/// `max_range_m` from the radar, or `None` outside coverage.
///
/// Pixel (row r, col c) sits at planar coordinates
/// `x = (c - N/2) * res` east, `y = (N/2 - r) * res` north with
/// `res = 2 * max_range_m / N`. Its azimuth is `atan2(x, y)` mapped to
/// [0, 360) and its nearest ray/gate are found by rounding. A pixel is
/// outside coverage when its range is below the first gate or above
/// `max_range_m`, or when the rounded gate index falls outside [0, G).
pub fn pixel_gate_map(
    sweep: &PolarSweep,
    n: usize,
    max_range_m: f64,
) -> Result<Vec<Option<(usize, usize)>>, RadarError> {
    if n < 8 || n % 2 != 0 {
        return Err(RadarError::InvalidGrid(n));
    }
    if !(max_range_m > sweep.first_gate_m) {
        return Err(RadarError::BadMaxRange(max_range_m));
    }
    let res = 2.0 * max_range_m / n as f64;
    let ray_step = sweep.ray_step_deg();
    let rays = sweep.ray_count() as i64;
    let gates = sweep.gate_count() as i64;
    let half = (n / 2) as f64;
    let mut map = Vec::with_capacity(n * n);
    for r in 0..n {
        let y = (half - r as f64) * res;
        for c in 0..n {
            let x = (c as f64 - half) * res;
            let range = (x * x + y * y).sqrt();
            if range < sweep.first_gate_m || range > max_range_m {
                map.push(None);
                continue;
            }
            let gate = ((range - sweep.first_gate_m) / sweep.gate_spacing_m).round() as i64;
            if gate < 0 || gate >= gates {
                map.push(None);
                continue;
            }
            let mut az = x.atan2(y).to_degrees();
            if az < 0.0 {
                az += 360.0;
            }
            let ray = (((az - sweep.az0_deg) / ray_step).round() as i64).rem_euclid(rays);
            map.push(Some((ray as usize, gate as usize)));
        }
    }
    Ok(map)
}

/// Renders a sweep onto an N×N Cartesian grid with the default dBZ mapping.
pub fn render_cartesian(
    sweep: &PolarSweep,
    n: usize,
    max_range_m: f64,
) -> Result<RadarImage, RadarError> {
    render_cartesian_with(sweep, n, max_range_m, DEFAULT_DBZ_LO, DEFAULT_DBZ_HI)
}

/// Renders a sweep with an explicit normalization span.
///
/// Nearest-neighbor resampling only: interpolation would smear dBZ values
/// across band boundaries and break exact thresholding. Gates inside
/// coverage that hold `NO_ECHO` render as value 0 with `valid = true`
/// (absence of echo is information, not missing data).
pub fn render_cartesian_with(
    sweep: &PolarSweep,
    n: usize,
    max_range_m: f64,
    dbz_lo: f32,
    dbz_hi: f32,
) -> Result<RadarImage, RadarError> {
    if dbz_lo >= dbz_hi {
        return Err(RadarError::DegenerateRange {
            lo: dbz_lo,
            hi: dbz_hi,
        });
    }
    let map = pixel_gate_map(sweep, n, max_range_m)?;
    let span = dbz_hi - dbz_lo;
    let mut values = vec![0.0f32; n * n];
    let mut dbz = vec![NO_ECHO; n * n];
    let mut valid = vec![false; n * n];
    let mut any_valid = false;
    for (i, entry) in map.iter().enumerate() {
        let Some((ray, gate)) = entry else { continue };
        valid[i] = true;
        any_valid = true;
        let z = sweep.gate(*ray, *gate);
        dbz[i] = z;
        if z != NO_ECHO {
            values[i] = ((z - dbz_lo) / span).clamp(0.0, 1.0);
        }
    }
    if !any_valid {
        return Err(RadarError::EmptyCoverage);
    }
    Ok(RadarImage::from_parts(
        n,
        values,
        dbz,
        valid,
        dbz_lo,
        dbz_hi,
        sweep.identity(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 360 rays at 1°, 256 gates of 1 km starting at the radar.
    fn test_sweep(fill: f32) -> PolarSweep {
        PolarSweep::new(
            "T",
            0,
            0.5,
            0.0,
            0.0,
            1000.0,
            360,
            256,
            vec![fill; 360 * 256],
        )
        .unwrap()
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        assert_eq!(normalize_dbz(-10.0, -10.0, 60.0).unwrap(), 0.0);
        assert_eq!(normalize_dbz(60.0, -10.0, 60.0).unwrap(), 1.0);
        assert_eq!(normalize_dbz(25.0, -10.0, 60.0).unwrap(), 0.5);
        assert_eq!(normalize_dbz(NO_ECHO, -10.0, 60.0).unwrap(), 0.0);
        assert_eq!(normalize_dbz(-40.0, -10.0, 60.0).unwrap(), 0.0);
        assert_eq!(normalize_dbz(80.0, -10.0, 60.0).unwrap(), 1.0);
    }

    #[test]
    fn normalize_rejects_degenerate_range() {
        assert!(matches!(
            normalize_dbz(0.0, 5.0, 5.0),
            Err(RadarError::DegenerateRange { .. })
        ));
    }

    #[test]
    fn normalize_is_monotone_and_idempotent_at_endpoints() {
        let mut prev = -f32::INFINITY;
        for i in 0..200 {
            let z = -40.0 + i as f32 * 0.6;
            let v = normalize_dbz(z, -10.0, 60.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        // Applying the map to already-clamped endpoint values stays put.
        let lo = normalize_dbz(-10.0, -10.0, 60.0).unwrap();
        assert_eq!(normalize_dbz(lo - 10.0, -10.0, 60.0).unwrap(), lo);
        let hi = normalize_dbz(60.0, -10.0, 60.0).unwrap();
        assert_eq!(normalize_dbz(60.0 + 10.0, -10.0, 60.0).unwrap(), hi);
    }

    #[test]
    fn north_axis_pixel_maps_to_ray_zero_gate_100() {
        let sweep = test_sweep(10.0);
        let map = pixel_gate_map(&sweep, 256, 128_000.0).unwrap();
        // Pixel (28, 128): x = 0, y = 100 km north, azimuth 0.
        let (ray, gate) = map[28 * 256 + 128].unwrap();
        assert_eq!(ray, 0);
        assert_eq!(gate, 100);
    }

    #[test]
    fn east_axis_pixel_maps_to_azimuth_90() {
        let sweep = test_sweep(10.0);
        let map = pixel_gate_map(&sweep, 256, 128_000.0).unwrap();
        // Pixel (128, 228): x = 100 km east, y = 0, azimuth 90 -> ray 90.
        let (ray, gate) = map[128 * 256 + 228].unwrap();
        assert_eq!(ray, 90);
        assert_eq!(gate, 100);
    }

    #[test]
    fn corner_pixel_is_beyond_max_range() {
        let sweep = test_sweep(10.0);
        let map = pixel_gate_map(&sweep, 256, 128_000.0).unwrap();
        // Pixel (0, 0) sits ~181 km out on a 128 km grid.
        assert!(map[0].is_none());
        let img = render_cartesian(&sweep, 256, 128_000.0).unwrap();
        assert!(!img.valid_at(0, 0));
        assert_eq!(img.value_at(0, 0), 0.0);
    }

    #[test]
    fn odd_or_small_grids_are_rejected() {
        let sweep = test_sweep(0.0);
        assert!(matches!(
            render_cartesian(&sweep, 255, 128_000.0),
            Err(RadarError::InvalidGrid(255))
        ));
        assert!(matches!(
            render_cartesian(&sweep, 6, 128_000.0),
            Err(RadarError::InvalidGrid(6))
        ));
    }

    #[test]
    fn valid_pixel_count_matches_circle_area() {
        let sweep = test_sweep(5.0);
        for n in [128usize, 256] {
            let img = render_cartesian(&sweep, n, 128_000.0).unwrap();
            let count = img.valid().iter().filter(|&&v| v).count() as f64;
            let expected = std::f64::consts::PI * (n as f64 / 2.0).powi(2);
            let ratio = count / expected;
            assert!(
                (0.98..=1.02).contains(&ratio),
                "n={n} count={count} expected={expected}"
            );
        }
    }

    #[test]
    fn no_echo_inside_coverage_is_valid_zero() {
        let mut values = vec![NO_ECHO; 360 * 256];
        values[100] = 30.0; // ray 0, gate 100
        let sweep =
            PolarSweep::new("T", 0, 0.5, 0.0, 0.0, 1000.0, 360, 256, values).unwrap();
        let img = render_cartesian(&sweep, 256, 128_000.0).unwrap();
        // A NO_ECHO pixel within range: valid but zero.
        assert!(img.valid_at(128, 129));
        assert_eq!(img.value_at(128, 129), 0.0);
        assert_eq!(img.dbz_at(128, 129), NO_ECHO);
        // The echo gate renders with its normalized value.
        assert!(img.valid_at(28, 128));
        let expect = normalize_dbz(30.0, DEFAULT_DBZ_LO, DEFAULT_DBZ_HI).unwrap();
        assert_eq!(img.value_at(28, 128), expect);
    }

    #[test]
    fn raising_one_gate_never_lowers_pixels() {
        let mut base_vals = vec![3.0f32; 360 * 256];
        base_vals[5 * 256 + 40] = 6.0;
        let base =
            PolarSweep::new("T", 0, 0.5, 0.0, 0.0, 1000.0, 360, 256, base_vals.clone()).unwrap();
        base_vals[5 * 256 + 40] = 12.0;
        let raised =
            PolarSweep::new("T", 0, 0.5, 0.0, 0.0, 1000.0, 360, 256, base_vals).unwrap();
        let a = render_cartesian(&base, 128, 128_000.0).unwrap();
        let b = render_cartesian(&raised, 128, 128_000.0).unwrap();
        for (va, vb) in a.values().iter().zip(b.values()) {
            assert!(vb >= va);
        }
    }
}
