//! Mirror-surface height maps, local radius of curvature versus angle, and
//! the polarization splitting an astigmatic mirror produces.
//!
//! Raster convention: row index grows along +y, column index along +x, and
//! angles are measured from +x towards +y.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

use crate::units::C;

/// Fitted quadratic coefficients below this (m⁻¹) count as flat.
pub const FLAT_THRESHOLD: f64 = 1e-12;

pub const DEFAULT_R_MAX: f64 = 15e-6;
pub const DEFAULT_ANGLE_STEP_DEG: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurvatureError {
    #[error("height map line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("height map has no `# pitch_m=` header")]
    Unit,
    #[error("line cut at {angle_deg:.2}° leaves the raster before r_max")]
    OutOfBounds { angle_deg: f64 },
    #[error("line cut at {angle_deg:.2}° crosses missing cells")]
    MissingData { angle_deg: f64 },
    #[error("need at least 5 samples for a parabola fit, got {0}")]
    TooFewSamples(usize),
    #[error("surface is flat along this cut")]
    FlatSurface,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("cavity length {length} m is not below the smaller radius {roc_minor} m")]
    UnstableCavity { length: f64, roc_minor: f64 },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    /// rows × cols, meters; NaN marks a missing cell.
    pub heights: DMatrix<f64>,
    pub pixel_pitch: f64,
    /// (row, col) of the analysis center, in pixels.
    pub origin: (f64, f64),
}

impl HeightMap {
    /// Map with the analysis center on the middle of the raster.
    pub fn centered(heights: DMatrix<f64>, pixel_pitch: f64) -> Self {
        let origin = (
            (heights.nrows() as f64 - 1.0) / 2.0,
            (heights.ncols() as f64 - 1.0) / 2.0,
        );
        Self { heights, pixel_pitch, origin }
    }

    /// Sample `z(x, y)` on a `rows × cols` raster centered on the origin.
    pub fn from_fn(rows: usize, cols: usize, pixel_pitch: f64, z: impl Fn(f64, f64) -> f64) -> Self {
        let (r0, c0) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
        let heights = DMatrix::from_fn(rows, cols, |r, c| {
            z((c as f64 - c0) * pixel_pitch, (r as f64 - r0) * pixel_pitch)
        });
        Self { heights, pixel_pitch, origin: (r0, c0) }
    }

    /// Bilinear interpolation at fractional pixel coordinates; `None` outside
    /// the raster.
    fn interpolate(&self, row: f64, col: f64) -> Option<f64> {
        let (nr, nc) = (self.heights.nrows(), self.heights.ncols());
        let eps = 1e-9;
        if row < -eps || col < -eps || row > (nr - 1) as f64 + eps || col > (nc - 1) as f64 + eps {
            return None;
        }
        let row = row.clamp(0.0, (nr - 1) as f64);
        let col = col.clamp(0.0, (nc - 1) as f64);
        let (r0, c0) = (row.floor() as usize, col.floor() as usize);
        let (r1, c1) = ((r0 + 1).min(nr - 1), (c0 + 1).min(nc - 1));
        let (fr, fc) = (row - r0 as f64, col - c0 as f64);
        let h = &self.heights;
        // skip zero-weight corners so a NaN just past an exact sample is harmless
        let mut acc = 0.0;
        for (r, c, w) in [
            (r0, c0, (1.0 - fr) * (1.0 - fc)),
            (r0, c1, (1.0 - fr) * fc),
            (r1, c0, fr * (1.0 - fc)),
            (r1, c1, fr * fc),
        ] {
            if w != 0.0 {
                acc += w * h[(r, c)];
            }
        }
        Some(acc)
    }
}

fn format_err(line: usize, reason: impl Into<String>) -> CurvatureError {
    CurvatureError::Format { line, reason: reason.into() }
}

/// Parse the text height-map format.
pub fn load_height_map(source: &str) -> Result<HeightMap, CurvatureError> {
    let mut pitch = None;
    let mut origin = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();

    for (i, raw) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            if !rows.is_empty() {
                return Err(format_err(lineno, "header after raster data"));
            }
            let Some((key, value)) = header.trim().split_once('=') else {
                return Err(format_err(lineno, format!("malformed header `{line}`")));
            };
            match key.trim() {
                "pitch_m" => {
                    let p: f64 = value
                        .trim()
                        .parse()
                        .map_err(|_| format_err(lineno, format!("bad pitch `{}`", value.trim())))?;
                    if !(p > 0.0 && p.is_finite()) {
                        return Err(format_err(lineno, "pitch must be positive"));
                    }
                    pitch = Some(p);
                }
                "origin" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    let parsed: Option<Vec<f64>> = parts.iter().map(|s| s.parse().ok()).collect();
                    match parsed.as_deref() {
                        Some([r, c]) if r.is_finite() && c.is_finite() => origin = Some((*r, *c)),
                        _ => return Err(format_err(lineno, format!("bad origin `{}`", value.trim()))),
                    }
                }
                other => return Err(format_err(lineno, format!("unknown header key `{other}`"))),
            }
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                let cell = cell.trim();
                if cell.is_empty() {
                    return Ok(f64::NAN);
                }
                cell.parse::<f64>()
                    .map_err(|_| format_err(lineno, format!("bad height `{cell}`")))
            })
            .collect::<Result<_, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(format_err(
                    lineno,
                    format!("ragged row: {} cells, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }

    let pitch = pitch.ok_or(CurvatureError::Unit)?;
    if rows.is_empty() {
        return Err(format_err(0, "no raster rows"));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    let heights = DMatrix::from_fn(nr, nc, |r, c| rows[r][c]);
    let mut map = HeightMap::centered(heights, pitch);
    if let Some((r, c)) = origin {
        if r < 0.0 || c < 0.0 || r > (nr - 1) as f64 || c > (nc - 1) as f64 {
            return Err(format_err(0, "origin outside the raster"));
        }
        map.origin = (r, c);
    }
    Ok(map)
}

pub fn read_height_map(path: &Path) -> Result<HeightMap, CurvatureError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CurvatureError::Io(format!("{}: {e}", path.display())))?;
    load_height_map(&text)
}

/// Write a map in the format `load_height_map` reads.
pub fn write_height_map(map: &HeightMap) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# pitch_m={:e}", map.pixel_pitch);
    let _ = writeln!(out, "# origin={},{}", map.origin.0, map.origin.1);
    for r in 0..map.heights.nrows() {
        let cells: Vec<String> = (0..map.heights.ncols())
            .map(|c| format!("{:e}", map.heights[(r, c)]))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Heights along a ray from the origin, `n_samples` points uniformly spaced
/// on `[0, r_max]`.
pub fn radial_linecut(
    map: &HeightMap,
    angle: f64,
    r_max: f64,
    n_samples: usize,
) -> Result<Vec<(f64, f64)>, CurvatureError> {
    if n_samples < 2 {
        return Err(CurvatureError::TooFewSamples(n_samples));
    }
    let angle_deg = angle.to_degrees();
    let (s, c) = angle.sin_cos();
    (0..n_samples)
        .map(|i| {
            let r = r_max * i as f64 / (n_samples - 1) as f64;
            let row = map.origin.0 + r * s / map.pixel_pitch;
            let col = map.origin.1 + r * c / map.pixel_pitch;
            let z = map
                .interpolate(row, col)
                .ok_or(CurvatureError::OutOfBounds { angle_deg })?;
            if z.is_nan() {
                return Err(CurvatureError::MissingData { angle_deg });
            }
            Ok((r, z))
        })
        .collect()
}

/// Radius of curvature from a parabola `z = a r² + b r + c` fitted to the cut;
/// positive for a concave surface (heights rising away from the center).
pub fn local_roc(linecut: &[(f64, f64)]) -> Result<f64, CurvatureError> {
    if linecut.len() < 5 {
        return Err(CurvatureError::TooFewSamples(linecut.len()));
    }
    // fit in r / r_max for conditioning
    let scale = linecut.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if scale <= 0.0 {
        return Err(CurvatureError::FlatSurface);
    }
    let m = linecut.len();
    let design = DMatrix::from_fn(m, 3, |i, j| (linecut[i].0 / scale).powi(2 - j as i32));
    let z = DVector::from_iterator(m, linecut.iter().map(|p| p.1));
    let coef = design
        .svd(true, true)
        .solve(&z, 1e-14)
        .map_err(|_| CurvatureError::FlatSurface)?;
    let a = coef[0] / (scale * scale);
    if !a.is_finite() || a.abs() < FLAT_THRESHOLD {
        return Err(CurvatureError::FlatSurface);
    }
    Ok(1.0 / (2.0 * a))
}

/// Samples per line cut: one per pixel of radius, at least 5.
pub fn samples_for(r_max: f64, pixel_pitch: f64) -> usize {
    ((r_max / pixel_pitch).ceil() as usize + 1).max(5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocEntry {
    /// rad, in [0, 2π)
    pub angle: f64,
    pub roc: Result<f64, CurvatureError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocProfile {
    pub entries: Vec<RocEntry>,
    pub r_max: f64,
}

impl RocProfile {
    pub fn successful(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.entries
            .iter()
            .filter_map(|e| e.roc.as_ref().ok().map(|r| (e.angle, *r)))
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.roc.is_err()).count()
    }

    /// CSV `angle_deg,roc_m`; failed angles carry `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle_deg,roc_m\n");
        for e in &self.entries {
            match &e.roc {
                Ok(r) => {
                    let _ = writeln!(out, "{},{:e}", e.angle.to_degrees(), r);
                }
                Err(_) => {
                    let _ = writeln!(out, "{},NaN", e.angle.to_degrees());
                }
            }
        }
        out
    }
}

/// `[0°, 360°)` in steps of `step_deg`, as radians.
pub fn angle_grid(step_deg: f64) -> Vec<f64> {
    let n = (360.0 / step_deg).round() as usize;
    (0..n).map(|i| (i as f64 * step_deg).to_radians()).collect()
}

fn normalize_angle(a: f64) -> f64 {
    let t = a.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

pub fn roc_vs_angle(map: &HeightMap, angles: &[f64], r_max: f64) -> RocProfile {
    let n = samples_for(r_max, map.pixel_pitch);
    let entries = angles
        .par_iter()
        .map(|&angle| RocEntry {
            angle: normalize_angle(angle),
            roc: radial_linecut(map, angle, r_max, n).and_then(|cut| local_roc(&cut)),
        })
        .collect();
    RocProfile { entries, r_max }
}

/// Sectional radius of curvature of `z = x²/(2R_a) + y²/(2R_b)` rotated so the
/// `R_a` axis sits at `axis_angle`.
pub fn quadratic_roc(theta: f64, roc_a: f64, roc_b: f64, axis_angle: f64) -> f64 {
    let t = theta - axis_angle;
    1.0 / (t.cos().powi(2) / roc_a + t.sin().powi(2) / roc_b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityGeometry {
    pub length: f64,
    pub wavelength: f64,
    /// Larger principal radius R_b, m.
    pub roc_major: f64,
    /// Smaller principal radius R_a, m.
    pub roc_minor: f64,
}

impl CavityGeometry {
    pub fn validate(&self) -> Result<(), CurvatureError> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !pos(self.length) {
            return Err(CurvatureError::InvalidGeometry("length must be positive"));
        }
        if !pos(self.wavelength) {
            return Err(CurvatureError::InvalidGeometry("wavelength must be positive"));
        }
        if !pos(self.roc_minor) || !pos(self.roc_major) {
            return Err(CurvatureError::InvalidGeometry("radii must be positive"));
        }
        if self.roc_minor > self.roc_major {
            return Err(CurvatureError::InvalidGeometry("roc_minor must not exceed roc_major"));
        }
        Ok(())
    }

    /// Two-mirror stability with the astigmatic mirror as one end: L < R_a.
    pub fn check_stable(&self) -> Result<(), CurvatureError> {
        self.validate()?;
        if self.length >= self.roc_minor {
            return Err(CurvatureError::UnstableCavity {
                length: self.length,
                roc_minor: self.roc_minor,
            });
        }
        Ok(())
    }
}

/// Fundamental-mode polarization splitting from mirror astigmatism, Hz:
/// `λc (1/R_a − 1/R_b) / (8π² L)`.
///
/// Only the geometry invariants are checked; the astigmatic mirror need not
/// set the cavity's stability (the small curved mirror sits opposite a large
/// one), so `CavityGeometry::check_stable` is separate.
pub fn predict_polarization_splitting(geom: &CavityGeometry) -> Result<f64, CurvatureError> {
    geom.validate()?;
    Ok(geom.wavelength * C * (1.0 / geom.roc_minor - 1.0 / geom.roc_major)
        / (8.0 * PI * PI * geom.length))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RA: f64 = 1e-3;
    const RB: f64 = 4e-3;
    const PITCH: f64 = 0.2e-6;

    fn astigmatic(axis: f64) -> HeightMap {
        let (s, c) = axis.sin_cos();
        HeightMap::from_fn(201, 201, PITCH, |x, y| {
            let (u, v) = (c * x + s * y, -s * x + c * y);
            u * u / (2.0 * RA) + v * v / (2.0 * RB)
        })
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn parses_small_map() {
        let m = load_height_map("# pitch_m=1e-6\n1,2,3\n4,5,6\n7,8,9\n").unwrap();
        assert_eq!(m.heights.len(), 9);
        assert_eq!(m.pixel_pitch, 1e-6);
        assert_eq!(m.origin, (1.0, 1.0));
        assert_eq!(m.heights[(1, 2)], 6.0);
    }

    #[test]
    fn parses_origin_header() {
        let m = load_height_map("# pitch_m=2e-6\n# origin=0,1\n1,2\n3,4\n").unwrap();
        assert_eq!(m.origin, (0.0, 1.0));
    }

    #[test]
    fn header_errors() {
        assert_eq!(load_height_map("1,2\n3,4\n"), Err(CurvatureError::Unit));
        assert!(matches!(
            load_height_map("# pitch_m=1e-6\n1,2,3\n4,5\n"),
            Err(CurvatureError::Format { line: 3, .. })
        ));
        assert!(matches!(load_height_map("# pitch_m=abc\n1\n"), Err(CurvatureError::Format { .. })));
        assert!(matches!(load_height_map("# pitch_m=-1\n1\n"), Err(CurvatureError::Format { .. })));
        assert!(matches!(load_height_map("# pitch_m=1\n1,x\n"), Err(CurvatureError::Format { .. })));
    }

    #[test]
    fn write_load_round_trip() {
        let m = astigmatic(0.3);
        let back = load_height_map(&write_height_map(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn flat_map_cut_is_constant_and_flat() {
        let m = HeightMap::from_fn(41, 41, 1e-6, |_, _| 3e-9);
        let cut = radial_linecut(&m, 0.7, 15e-6, 16).unwrap();
        assert!(cut.iter().all(|p| (p.1 - 3e-9).abs() < 1e-23));
        assert_eq!(local_roc(&cut), Err(CurvatureError::FlatSurface));
    }

    #[test]
    fn paraboloid_cut_matches_surface() {
        let r_max = 15e-6;
        let m = HeightMap::from_fn(201, 201, PITCH, |x, y| (x * x + y * y) / (2.0 * RA));
        let zmax = r_max * r_max / (2.0 * RA);
        let bound = (PITCH / r_max).powi(2) * zmax;
        for angle in [0.0, 0.3, 1.1, 2.5, 4.0] {
            for (r, z) in radial_linecut(&m, angle, r_max, 61).unwrap() {
                assert!((z - r * r / (2.0 * RA)).abs() < bound);
            }
        }
    }

    #[test]
    fn off_raster_ray_is_out_of_bounds() {
        let m = astigmatic(0.0);
        let err = radial_linecut(&m, 0.4, 1e-3, 50).unwrap_err();
        assert!(matches!(err, CurvatureError::OutOfBounds { .. }));
    }

    #[test]
    fn missing_cell_is_reported() {
        let mut m = astigmatic(0.0);
        m.heights[(100, 105)] = f64::NAN;
        assert!(matches!(
            radial_linecut(&m, 0.0, 15e-6, 76),
            Err(CurvatureError::MissingData { .. })
        ));
        assert!(radial_linecut(&m, PI / 2.0, 15e-6, 76).is_ok());
    }

    #[test]
    fn paraboloid_roc() {
        let m = HeightMap::from_fn(201, 201, PITCH, |x, y| (x * x + y * y) / (2.0 * RA));
        let cut = radial_linecut(&m, 0.9, 15e-6, 76).unwrap();
        assert!(rel(local_roc(&cut).unwrap(), RA) < 1e-3);
    }

    #[test]
    fn convex_surface_has_negative_roc() {
        let cut: Vec<(f64, f64)> = (0..20).map(|i| {
            let r = i as f64 * 1e-6;
            (r, -r * r / (2.0 * RA))
        }).collect();
        assert!(rel(local_roc(&cut).unwrap(), -RA) < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(local_roc(&[(0.0, 0.0); 4]), Err(CurvatureError::TooFewSamples(4)));
    }

    #[test]
    fn principal_axes_and_diagonal() {
        let m = astigmatic(0.0);
        let angles = [0.0, PI / 4.0, PI / 2.0];
        let prof = roc_vs_angle(&m, &angles, DEFAULT_R_MAX);
        let rocs: Vec<f64> = prof.successful().map(|p| p.1).collect();
        assert!(rel(rocs[0], RA) < 1e-3);
        assert!(rel(rocs[1], 1.6e-3) < 1e-3);
        assert!(rel(rocs[2], RB) < 1e-3);
    }

    #[test]
    fn rotated_surface_follows_quadratic_form() {
        let axis = 0.4;
        let m = astigmatic(axis);
        let prof = roc_vs_angle(&m, &angle_grid(DEFAULT_ANGLE_STEP_DEG), DEFAULT_R_MAX);
        assert_eq!(prof.entries.len(), 72);
        assert_eq!(prof.failures(), 0);
        for (theta, roc) in prof.successful() {
            assert!(rel(roc, quadratic_roc(theta, RA, RB, axis)) < 5e-3, "θ={theta}");
        }
    }

    #[test]
    fn two_fold_symmetry() {
        let m = astigmatic(0.25);
        let prof = roc_vs_angle(&m, &angle_grid(5.0), DEFAULT_R_MAX);
        let rocs: Vec<f64> = prof.successful().map(|p| p.1).collect();
        for i in 0..36 {
            assert!(rel(rocs[i], rocs[i + 36]) < 1e-3);
        }
    }

    #[test]
    fn flagged_angle_does_not_abort_profile() {
        let mut m = astigmatic(0.0);
        m.heights[(100, 110)] = f64::NAN;
        let prof = roc_vs_angle(&m, &angle_grid(90.0), DEFAULT_R_MAX);
        assert_eq!(prof.failures(), 1);
        assert!(prof.entries[0].roc.is_err());
        assert!(prof.to_csv().contains("0,NaN"));
        assert!(prof.to_csv().starts_with("angle_deg,roc_m\n"));
    }

    #[test]
    fn angles_are_normalized() {
        let m = astigmatic(0.0);
        let prof = roc_vs_angle(&m, &[-PI / 2.0, 2.0 * PI], DEFAULT_R_MAX);
        assert!((prof.entries[0].angle - 1.5 * PI).abs() < 1e-12);
        assert_eq!(prof.entries[1].angle, 0.0);
    }

    fn lab() -> CavityGeometry {
        CavityGeometry { length: 0.05, wavelength: 1064e-9, roc_major: RB, roc_minor: RA }
    }

    #[test]
    fn lab_splitting() {
        // 1064e-9 · c · 750 / (8π² · 0.05)
        let nu = predict_polarization_splitting(&lab()).unwrap();
        assert!(rel(nu, 60_598.78) < 1e-6, "{nu}");
    }

    #[test]
    fn no_astigmatism_no_splitting() {
        let g = CavityGeometry { roc_major: RA, ..lab() };
        assert_eq!(predict_polarization_splitting(&g).unwrap(), 0.0);
    }

    #[test]
    fn splitting_scales_inversely_with_length() {
        let long = predict_polarization_splitting(&lab()).unwrap();
        let short = predict_polarization_splitting(&CavityGeometry { length: 0.01, ..lab() }).unwrap();
        assert!(rel(short, 5.0 * long) < 1e-12);
    }

    #[test]
    fn geometry_validation() {
        let bad = CavityGeometry { roc_minor: RB, roc_major: RA, ..lab() };
        assert!(matches!(predict_polarization_splitting(&bad), Err(CurvatureError::InvalidGeometry(_))));
        assert!(matches!(lab().check_stable(), Err(CurvatureError::UnstableCavity { .. })));
        assert!(CavityGeometry { length: 0.5e-3, ..lab() }.check_stable().is_ok());
    }

    proptest! {
        #[test]
        fn splitting_homogeneous_degree_minus_two(s in 0.1f64..10.0) {
            let g = lab();
            let scaled = CavityGeometry {
                length: g.length * s,
                roc_major: g.roc_major * s,
                roc_minor: g.roc_minor * s,
                ..g
            };
            let a = predict_polarization_splitting(&g).unwrap();
            let b = predict_polarization_splitting(&scaled).unwrap();
            prop_assert!(rel(b, a / (s * s)) < 1e-12);
        }

        #[test]
        fn quadratic_surfaces_recovered(
            ra in 0.5e-3f64..3e-3,
            ratio in 1.0f64..5.0,
            axis in 0.0f64..PI,
            theta in 0.0f64..(2.0 * PI),
        ) {
            let rb = ra * ratio;
            let (s, c) = axis.sin_cos();
            let m = HeightMap::from_fn(161, 161, PITCH, |x, y| {
                let (u, v) = (c * x + s * y, -s * x + c * y);
                u * u / (2.0 * ra) + v * v / (2.0 * rb)
            });
            let prof = roc_vs_angle(&m, &[theta], DEFAULT_R_MAX);
            let roc = *prof.entries[0].roc.as_ref().unwrap();
            prop_assert!(rel(roc, quadratic_roc(theta, ra, rb, axis)) < 5e-3);
        }
    }
}
