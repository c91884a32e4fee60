//! Single-mode linearized optomechanics.
//!
//! Sign convention: detuning `Δ = ω_laser − ω_mode`, so red detuning is
//! negative and produces positive optical damping (cooling). Every rate and
//! frequency here is angular (rad/s); linewidths are full widths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{optical_angular_frequency, HBAR, K_B};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("mechanical mode is unstable: Γ_m + Γ_opt = {total_damping:.6e} rad/s ≤ 0")]
    Instability { total_damping: f64 },
}

pub(crate) fn require(cond: bool, name: &'static str, reason: &str) -> Result<(), ModelError> {
    if cond {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            reason: reason.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

/// One polarization eigenmode of the cavity as seen by the drive laser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalMode {
    /// `ω_laser − ω_mode`, rad/s.
    pub detuning: f64,
    /// Energy decay rate (FWHM), rad/s.
    pub linewidth: f64,
    /// Input power projected onto this mode, W.
    pub input_power: f64,
    /// Vacuum wavelength, m.
    pub wavelength: f64,
    /// Lumped in-coupling efficiency.
    pub coupling_efficiency: f64,
    pub polarization: Polarization,
}

impl OpticalMode {
    pub fn new(
        detuning: f64,
        linewidth: f64,
        input_power: f64,
        wavelength: f64,
        polarization: Polarization,
    ) -> Result<Self, ModelError> {
        let mode = Self {
            detuning,
            linewidth,
            input_power,
            wavelength,
            coupling_efficiency: 1.0,
            polarization,
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn with_coupling_efficiency(mut self, eta: f64) -> Result<Self, ModelError> {
        self.coupling_efficiency = eta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        require(self.detuning.is_finite(), "detuning", "must be finite")?;
        require(
            self.linewidth > 0.0 && self.linewidth.is_finite(),
            "kappa",
            "must be positive",
        )?;
        require(
            self.input_power >= 0.0 && self.input_power.is_finite(),
            "power",
            "must be non-negative",
        )?;
        require(
            self.wavelength > 0.0 && self.wavelength.is_finite(),
            "wavelength",
            "must be positive",
        )?;
        require(
            (0.0..=1.0).contains(&self.coupling_efficiency),
            "eta",
            "must lie in [0, 1]",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanicalMode {
    /// Resonance frequency Ω_m, rad/s.
    pub omega_m: f64,
    /// Intrinsic energy damping rate Γ_m (FWHM), rad/s.
    pub gamma_m: f64,
    /// Effective mass, kg.
    pub effective_mass: f64,
    /// Bath temperature, K.
    pub bath_temperature: f64,
}

impl MechanicalMode {
    pub fn new(
        omega_m: f64,
        gamma_m: f64,
        effective_mass: f64,
        bath_temperature: f64,
    ) -> Result<Self, ModelError> {
        let mech = Self {
            omega_m,
            gamma_m,
            effective_mass,
            bath_temperature,
        };
        mech.validate()?;
        Ok(mech)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        require(
            self.omega_m > 0.0 && self.omega_m.is_finite(),
            "omega_m",
            "must be positive",
        )?;
        require(
            self.gamma_m > 0.0 && self.gamma_m.is_finite(),
            "gamma_m",
            "must be positive",
        )?;
        require(
            self.effective_mass > 0.0 && self.effective_mass.is_finite(),
            "m_eff",
            "must be positive",
        )?;
        require(
            self.bath_temperature >= 0.0 && self.bath_temperature.is_finite(),
            "t_bath",
            "must be non-negative",
        )
    }

    pub fn quality_factor(&self) -> f64 {
        self.omega_m / self.gamma_m
    }
}

/// Mean intracavity photon number for a fixed input power.
pub fn intracavity_photon_number(mode: &OpticalMode) -> f64 {
    let half = 0.5 * mode.linewidth;
    let omega_l = optical_angular_frequency(mode.wavelength);
    mode.coupling_efficiency * mode.linewidth * mode.input_power
        / (HBAR * omega_l * (half * half + mode.detuning * mode.detuning))
}

// Both sideband denominators, (κ/2)² + (Δ ± Ω_m)².
#[inline]
fn sideband_denominators(mode: &OpticalMode, omega_m: f64) -> (f64, f64) {
    let half = 0.5 * mode.linewidth;
    let lower = mode.detuning + omega_m;
    let upper = mode.detuning - omega_m;
    (half * half + lower * lower, half * half + upper * upper)
}

/// Light-induced damping Γ_opt, rad/s. Positive on the red side.
pub fn optical_damping(mode: &OpticalMode, mech: &MechanicalMode, g0: f64) -> f64 {
    let (a, b) = sideband_denominators(mode, mech.omega_m);
    let kappa = mode.linewidth;
    intracavity_photon_number(mode) * g0 * g0 * (kappa / a - kappa / b)
}

/// Light-induced shift of the mechanical frequency δΩ_m, rad/s.
pub fn optical_spring(mode: &OpticalMode, mech: &MechanicalMode, g0: f64) -> f64 {
    let (a, b) = sideband_denominators(mode, mech.omega_m);
    let lower = mode.detuning + mech.omega_m;
    let upper = mode.detuning - mech.omega_m;
    intracavity_photon_number(mode) * g0 * g0 * (lower / a + upper / b)
}

/// Sideband-resolved cooling limit `(κ/4Ω_m)²`.
pub fn minimum_phonon_number(kappa: f64, omega_m: f64) -> f64 {
    let r = kappa / (4.0 * omega_m);
    r * r
}

/// Bose–Einstein occupation of a mode at `omega_m` in a bath at `temperature`.
pub fn thermal_occupation(temperature: f64, omega_m: f64) -> f64 {
    if temperature <= 0.0 {
        return 0.0;
    }
    let x = HBAR * omega_m / (K_B * temperature);
    1.0 / x.exp_m1()
}

/// Classical (equipartition) occupation `k_B T / ħΩ_m`.
///
/// This is the occupation that pairs with an area-derived temperature: a mode
/// at this occupation reports exactly `T` through `ħΩ_m n / k_B`.
pub fn equipartition_occupation(temperature: f64, omega_m: f64) -> f64 {
    K_B * temperature / (HBAR * omega_m)
}

/// Temperature corresponding to an occupation through `T = ħΩ_m n / k_B`.
pub fn occupation_to_temperature(n: f64, omega_m: f64) -> f64 {
    HBAR * omega_m * n / K_B
}

/// Steady-state mode temperature under optical damping.
///
/// The occupation is the damping-weighted mean of the bath occupation and the
/// sideband cooling limit; `gamma_m + gamma_opt` must be positive.
pub fn effective_temperature(
    gamma_m: f64,
    gamma_opt: f64,
    n_th: f64,
    n_min: f64,
    omega_m: f64,
) -> Result<f64, ModelError> {
    let total = gamma_m + gamma_opt;
    if !(total > 0.0) {
        return Err(ModelError::Instability {
            total_damping: total,
        });
    }
    if gamma_opt.is_infinite() {
        return Ok(occupation_to_temperature(n_min, omega_m));
    }
    let n_eff = (n_th * gamma_m + n_min * gamma_opt) / total;
    Ok(occupation_to_temperature(n_eff, omega_m))
}

/// Multi-photon cooperativity `4 n_cav g0² / (κ Γ_m)`.
pub fn cooperativity(n_cav: f64, g0: f64, kappa: f64, gamma_m: f64) -> f64 {
    4.0 * n_cav * g0 * g0 / (kappa * gamma_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::hz_to_rad;
    use proptest::prelude::*;

    fn mode(detuning: f64, kappa: f64, power: f64) -> OpticalMode {
        OpticalMode::new(detuning, kappa, power, 1064e-9, Polarization::H).unwrap()
    }

    fn mech() -> MechanicalMode {
        MechanicalMode::new(hz_to_rad(222e3), hz_to_rad(19.0), 100e-12, 300.0).unwrap()
    }

    #[test]
    fn photon_number_on_resonance() {
        let kappa = hz_to_rad(52e3);
        let m = mode(0.0, kappa, 2.19e-6);
        let omega_l = optical_angular_frequency(1064e-9);
        let reduced = 4.0 * 2.19e-6 / (HBAR * omega_l * kappa);
        let n = intracavity_photon_number(&m);
        assert!((n - reduced).abs() / reduced < 1e-14);
        // direct evaluation, 1.436e8
        assert!((n - 1.436_103_663e8).abs() / n < 1e-8, "{n}");
    }

    #[test]
    fn photon_number_off_resonance_vanishes() {
        let m = mode(1e18, hz_to_rad(52e3), 1e-3);
        assert!(intracavity_photon_number(&m) < 1e-9);
    }

    #[test]
    fn no_damping_or_spring_on_resonance() {
        let m = mode(0.0, hz_to_rad(52e3), 2e-6);
        assert_eq!(optical_damping(&m, &mech(), 10.0), 0.0);
        assert_eq!(optical_spring(&m, &mech(), 10.0), 0.0);
    }

    #[test]
    fn resolved_sideband_cooling_rate() {
        let mech = mech();
        let kappa = mech.omega_m * 1e-4;
        let m = mode(-mech.omega_m, kappa, 1e-6);
        let g0 = 3.0;
        let expected = 4.0 * intracavity_photon_number(&m) * g0 * g0 / kappa;
        let got = optical_damping(&m, &mech, g0);
        assert!((got - expected).abs() / expected < 1e-6);
    }

    #[test]
    fn blue_sideband_spring_is_positive_and_first_term_only() {
        let mech = mech();
        let kappa = mech.omega_m * 1e-3;
        let m = mode(mech.omega_m, kappa, 1e-6);
        let g0 = 2.0;
        let n = intracavity_photon_number(&m);
        let half = kappa / 2.0;
        let first = n * g0 * g0 * (2.0 * mech.omega_m) / (half * half + 4.0 * mech.omega_m.powi(2));
        let got = optical_spring(&m, &mech, g0);
        assert!(got > 0.0);
        assert!((got - first).abs() <= 1e-15 * first.abs());
    }

    #[test]
    fn odd_symmetry_on_grid() {
        let mech = mech();
        let kappa = hz_to_rad(52e3);
        for i in 0..101 {
            let d = hz_to_rad(-500e3 + 10e3 * i as f64);
            let plus = mode(d, kappa, 2e-6);
            let minus = mode(-d, kappa, 2e-6);
            let (gp, gm) = (optical_damping(&plus, &mech, 5.0), optical_damping(&minus, &mech, 5.0));
            let (sp, sm) = (optical_spring(&plus, &mech, 5.0), optical_spring(&minus, &mech, 5.0));
            assert!((gp + gm).abs() <= 1e-12 * gp.abs().max(1e-300));
            assert!((sp + sm).abs() <= 1e-12 * sp.abs().max(1e-300));
        }
    }

    #[test]
    fn minimum_phonon_number_anchors() {
        let n = minimum_phonon_number(hz_to_rad(52e3), hz_to_rad(222e3));
        assert!((n - 3.4291e-3).abs() < 1e-7);
        assert_eq!(minimum_phonon_number(0.0, 1.0), 0.0);
        assert!((minimum_phonon_number(4.0, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn thermal_occupation_anchors() {
        let omega = hz_to_rad(222e3);
        let n = thermal_occupation(300.0, omega);
        assert!((n - 2.815_759_29e7).abs() / n < 1e-8);
        let high_t = K_B * 300.0 / (HBAR * omega);
        assert!((n - high_t).abs() / high_t < 1e-6);
        assert_eq!(thermal_occupation(0.0, omega), 0.0);
        let t_one = HBAR * omega / (K_B * std::f64::consts::LN_2);
        assert!((thermal_occupation(t_one, omega) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn effective_temperature_limits() {
        let omega = hz_to_rad(222e3);
        let t_bath = 300.0;
        let n_th = equipartition_occupation(t_bath, omega);
        let n_min = minimum_phonon_number(hz_to_rad(52e3), omega);
        let gm = hz_to_rad(19.0);
        let t0 = effective_temperature(gm, 0.0, n_th, n_min, omega).unwrap();
        assert!((t0 - t_bath).abs() / t_bath < 1e-12);
        let t_inf = effective_temperature(gm, f64::INFINITY, n_th, n_min, omega).unwrap();
        let floor = occupation_to_temperature(n_min, omega);
        assert!((t_inf - floor).abs() / floor < 1e-12);
        let t_big = effective_temperature(gm, gm * 1e18, n_th, n_min, omega).unwrap();
        assert!((t_big - floor).abs() / floor < 1e-6);
        let t_half = effective_temperature(gm, gm, n_th, 0.0, omega).unwrap();
        assert!((t_half - t_bath / 2.0).abs() / t_bath < 1e-12);
    }

    #[test]
    fn effective_temperature_rejects_antidamping() {
        let err = effective_temperature(1.0, -1.0, 10.0, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, ModelError::Instability { .. }));
        assert!(effective_temperature(1.0, -2.0, 10.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn cooperativity_is_linear_in_power() {
        let kappa = hz_to_rad(85e3);
        let m1 = mode(-hz_to_rad(250e3), kappa, 25e-6);
        let m2 = mode(-hz_to_rad(250e3), kappa, 50e-6);
        let c1 = cooperativity(intracavity_photon_number(&m1), 50.0, kappa, 3.0);
        let c2 = cooperativity(intracavity_photon_number(&m2), 50.0, kappa, 3.0);
        assert!((c2 / c1 - 2.0).abs() < 1e-12);
        assert_eq!(cooperativity(1e8, 0.0, kappa, 3.0), 0.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(OpticalMode::new(0.0, 0.0, 1.0, 1e-6, Polarization::H).is_err());
        assert!(OpticalMode::new(0.0, 1.0, -1.0, 1e-6, Polarization::H).is_err());
        assert!(mode(0.0, 1.0, 1.0).with_coupling_efficiency(1.5).is_err());
        assert!(MechanicalMode::new(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(MechanicalMode::new(1.0, 1.0, 1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn damping_sign_contract(
            d_khz in 0.1f64..2000.0,
            kappa_khz in 0.1f64..2000.0,
            om_khz in 1.0f64..2000.0,
        ) {
            let mech = MechanicalMode::new(hz_to_rad(om_khz * 1e3), 1.0, 1e-10, 1.0).unwrap();
            let kappa = hz_to_rad(kappa_khz * 1e3);
            let red = mode(-hz_to_rad(d_khz * 1e3), kappa, 1e-6);
            let blue = mode(hz_to_rad(d_khz * 1e3), kappa, 1e-6);
            prop_assert!(optical_damping(&red, &mech, 1.0) > 0.0);
            prop_assert!(optical_damping(&blue, &mech, 1.0) < 0.0);
        }

        #[test]
        fn photon_number_decreases_with_abs_detuning(a in 0.0f64..1e7, b in 0.0f64..1e7) {
            let kappa = hz_to_rad(52e3);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let n_lo = intracavity_photon_number(&mode(-lo, kappa, 1e-6));
            let n_hi = intracavity_photon_number(&mode(hi, kappa, 1e-6));
            prop_assert!(n_lo >= n_hi);
        }

        #[test]
        fn effective_temperature_is_a_weighted_mean(
            t_bath in 0.0f64..400.0,
            ratio in 0.0f64..1e6,
        ) {
            let omega = hz_to_rad(222e3);
            let gm = hz_to_rad(19.0);
            let n_th = equipartition_occupation(t_bath, omega);
            let n_min = minimum_phonon_number(hz_to_rad(52e3), omega);
            let t = effective_temperature(gm, gm * ratio, n_th, n_min, omega).unwrap();
            let floor = occupation_to_temperature(n_min, omega);
            let (lo, hi) = if floor < t_bath { (floor, t_bath) } else { (t_bath, floor) };
            prop_assert!(t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn bose_matches_equipartition_at_high_temperature(t in 1.0f64..1e4) {
            let omega = hz_to_rad(222e3);
            // ħΩ/k_BT < 1e-3 throughout this range
            let exact = thermal_occupation(t, omega);
            let classical = equipartition_occupation(t, omega);
            prop_assert!((exact - classical).abs() / classical < 1e-3);
        }
    }
}
