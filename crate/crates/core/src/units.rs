//! Physical constants and the Hz <-> rad/s boundary conversions.
//!
//! Everything inside the crate works in angular frequency. Values entering or
//! leaving through config files, CSV and JSON are ordinary frequencies in Hz.

use std::f64::consts::TAU;

/// Reduced Planck constant, J·s (CODATA 2018, exact).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Boltzmann constant, J/K (exact).
pub const K_B: f64 = 1.380_649e-23;

/// Speed of light in vacuum, m/s (exact).
pub const C: f64 = 299_792_458.0;

/// The constant set as a value, for callers that want to pass it around.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub hbar: f64,
    pub k_b: f64,
    pub c: f64,
}

pub const CODATA: Constants = Constants {
    hbar: HBAR,
    k_b: K_B,
    c: C,
};

#[inline]
pub fn hz_to_rad(f_hz: f64) -> f64 {
    f_hz * TAU
}

#[inline]
pub fn rad_to_hz(omega: f64) -> f64 {
    omega / TAU
}

/// Laser angular frequency for a vacuum wavelength.
#[inline]
pub fn optical_angular_frequency(wavelength: f64) -> f64 {
    TAU * C / wavelength
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_invert() {
        let f = 222e3;
        assert!((rad_to_hz(hz_to_rad(f)) - f).abs() < 1e-9);
        assert!((hz_to_rad(1.0) - TAU).abs() < 1e-15);
    }

    #[test]
    fn nd_yag_line() {
        let w = optical_angular_frequency(1064e-9);
        assert!((w - 1.770_3e15).abs() / w < 1e-4);
    }
}
