//! Sideband thermometry through the polarization modes.
//!
//! With the laser between the modes, Stokes light (rate ∝ n+1) is filtered by
//! one mode and anti-Stokes light (rate ∝ n) by the other, so the H/V output
//! ratio reads out the phonon occupation. A 45° polarizer after the cavity
//! mixes both sidebands with the carrier; the detector then sees a tone at
//! Ω_m from the sideband imbalance and a tone at 2Ω_m from the sideband beat.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roots::bisect;
use crate::two_mode::TwoModeSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermometryError {
    #[error("phonon number must be finite and non-negative, got {0}")]
    InvalidOccupation(f64),
    #[error("ratio denominator vanishes (no V-mode Stokes light at n = 0)")]
    DivisionDegenerate,
    #[error("ratio {ratio} outside the invertible range ({asymptote}, {at_zero}]")]
    OutOfRange {
        ratio: f64,
        asymptote: f64,
        at_zero: f64,
    },
    #[error("carrier amplitude must be positive")]
    InvalidCarrier,
}

/// Cavity filtering of each sideband by each mode, as unit-peak Lorentzians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandWeights {
    pub stokes_h: f64,
    pub antistokes_h: f64,
    pub stokes_v: f64,
    pub antistokes_v: f64,
}

impl SidebandWeights {
    /// Perfectly resolved limit: Stokes only through H, anti-Stokes only through V.
    pub const IDEAL: SidebandWeights = SidebandWeights {
        stokes_h: 1.0,
        antistokes_h: 0.0,
        stokes_v: 0.0,
        antistokes_v: 1.0,
    };

    /// Fully unresolved limit: every sideband passes every mode.
    pub const UNRESOLVED: SidebandWeights = SidebandWeights {
        stokes_h: 1.0,
        antistokes_h: 1.0,
        stokes_v: 1.0,
        antistokes_v: 1.0,
    };

    /// Whether the H/V ratio decreases strictly with occupation.
    pub fn is_invertible(&self) -> bool {
        self.stokes_h * self.antistokes_v > self.antistokes_h * self.stokes_v
    }

    /// Stokes and anti-Stokes weights after projection on a 45° polarizer.
    pub fn projected(&self) -> (f64, f64) {
        (
            0.5 * (self.stokes_h + self.stokes_v),
            0.5 * (self.antistokes_h + self.antistokes_v),
        )
    }
}

pub fn sideband_weights(sys: &TwoModeSystem) -> SidebandWeights {
    let half = 0.5 * sys.params().kappa;
    let omega_m = sys.mech().omega_m;
    // sideband at ω_L ∓ Ω_m sits Δ_j ∓ Ω_m from mode j
    let lorentz = |x: f64| half * half / (half * half + x * x);
    let (dh, dv) = (sys.mode_h().detuning, sys.mode_v().detuning);
    SidebandWeights {
        stokes_h: lorentz(dh - omega_m),
        antistokes_h: lorentz(dh + omega_m),
        stokes_v: lorentz(dv - omega_m),
        antistokes_v: lorentz(dv + omega_m),
    }
}

fn check_occupation(n: f64) -> Result<(), ThermometryError> {
    if n >= 0.0 && n.is_finite() {
        Ok(())
    } else {
        Err(ThermometryError::InvalidOccupation(n))
    }
}

/// H/V output power ratio at occupation `n`.
pub fn ratio_from_weights(w: &SidebandWeights, n: f64) -> Result<f64, ThermometryError> {
    check_occupation(n)?;
    let num = (n + 1.0) * w.stokes_h + n * w.antistokes_h;
    let den = (n + 1.0) * w.stokes_v + n * w.antistokes_v;
    if den == 0.0 {
        return Err(ThermometryError::DivisionDegenerate);
    }
    Ok(num / den)
}

pub fn polarization_ratio(sys: &TwoModeSystem, n: f64) -> Result<f64, ThermometryError> {
    ratio_from_weights(&sideband_weights(sys), n)
}

/// `n → ∞` limit of the ratio.
pub fn ratio_asymptote(w: &SidebandWeights) -> f64 {
    (w.stokes_h + w.antistokes_h) / (w.stokes_v + w.antistokes_v)
}

/// Invert the H/V ratio for the occupation by bisection.
pub fn occupation_from_weights(w: &SidebandWeights, ratio: f64) -> Result<f64, ThermometryError> {
    let asymptote = ratio_asymptote(w);
    let at_zero = if w.stokes_v > 0.0 {
        w.stokes_h / w.stokes_v
    } else {
        f64::INFINITY
    };
    if !(ratio > asymptote && ratio <= at_zero) || !w.is_invertible() {
        return Err(ThermometryError::OutOfRange {
            ratio,
            asymptote,
            at_zero,
        });
    }
    if ratio == at_zero {
        return Ok(0.0);
    }
    let f = |n: f64| ratio_from_weights(w, n).unwrap_or(f64::INFINITY) - ratio;
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(ThermometryError::OutOfRange {
                ratio,
                asymptote,
                at_zero,
            });
        }
    }
    // at n = 0 the ratio is at_zero > ratio unless the denominator vanishes
    let lo = if w.stokes_v > 0.0 { 0.0 } else { f64::MIN_POSITIVE };
    bisect(f, lo, hi, 1e-13, 0.0).ok_or(ThermometryError::OutOfRange {
        ratio,
        asymptote,
        at_zero,
    })
}

pub fn estimate_phonon_number(ratio: f64, sys: &TwoModeSystem) -> Result<f64, ThermometryError> {
    occupation_from_weights(&sideband_weights(sys), ratio)
}

/// Detector tones at Ω_m and 2Ω_m behind the 45° polarizer, arbitrary units.
///
/// Sideband fields are `a_S = √((n+1) t_S)` and `a_AS = √(n t_AS)` with
/// opposite sign, so the carrier beat at Ω_m is `carrier · |a_S − a_AS|` and
/// the sideband beat at 2Ω_m is `a_S · a_AS`.
pub fn signal_components_from_weights(
    w: &SidebandWeights,
    n: f64,
    carrier_amplitude: f64,
) -> Result<(f64, f64), ThermometryError> {
    check_occupation(n)?;
    if !(carrier_amplitude > 0.0 && carrier_amplitude.is_finite()) {
        return Err(ThermometryError::InvalidCarrier);
    }
    let (t_s, t_as) = w.projected();
    let a_s = ((n + 1.0) * t_s).sqrt();
    let a_as = (n * t_as).sqrt();
    Ok((carrier_amplitude * (a_s - a_as).abs(), a_s * a_as))
}

pub fn detector_signal_components(
    sys: &TwoModeSystem,
    n: f64,
    carrier_amplitude: f64,
) -> Result<(f64, f64), ThermometryError> {
    signal_components_from_weights(&sideband_weights(sys), n, carrier_amplitude)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermometryResult {
    pub ratio_hv: f64,
    pub n_est: f64,
    pub s_omega: f64,
    pub s_2omega: f64,
}

/// What the experiment provides: a known occupation (forward model) or a
/// measured H/V ratio (inversion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThermometryInput {
    Occupation(f64),
    Ratio(f64),
}

pub fn analyze(
    w: &SidebandWeights,
    input: ThermometryInput,
    carrier_amplitude: f64,
) -> Result<ThermometryResult, ThermometryError> {
    let (n, ratio) = match input {
        ThermometryInput::Occupation(n) => (n, ratio_from_weights(w, n)?),
        ThermometryInput::Ratio(r) => (occupation_from_weights(w, r)?, r),
    };
    let (s_omega, s_2omega) = signal_components_from_weights(w, n, carrier_amplitude)?;
    Ok(ThermometryResult {
        ratio_hv: ratio,
        n_est: n,
        s_omega,
        s_2omega,
    })
}
