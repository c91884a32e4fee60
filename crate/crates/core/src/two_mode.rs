//! Two polarization modes driven by one laser tone.
//!
//! The laser position is given relative to the H mode, which is the
//! lower-frequency mode. The V mode sits `splitting` above it, so with the
//! laser between the modes it is blue of H and red of V.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    cooperativity, effective_temperature, equipartition_occupation, intracavity_photon_number,
    minimum_phonon_number, optical_damping, optical_spring, require, thermal_occupation,
    MechanicalMode, ModelError, OpticalMode, Polarization,
};
use crate::roots::bisect;
use crate::units::{hz_to_rad, HBAR, K_B};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwoModeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("detuning grid must be finite and strictly increasing (index {index})")]
    InvalidGrid { index: usize },
    #[error("total optical damping does not change sign between the mode centers")]
    NoCancellation,
}

/// Laser-independent parameters of the two-mode system. Rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoModeParams {
    /// Shared cavity linewidth κ (FWHM).
    pub kappa: f64,
    /// `ω_V − ω_H`, positive.
    pub splitting: f64,
    pub power_h: f64,
    pub power_v: f64,
    pub wavelength: f64,
    pub coupling_efficiency: f64,
    pub g0: f64,
    pub mech: MechanicalMode,
}

impl TwoModeParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        require(
            self.splitting > 0.0 && self.splitting.is_finite(),
            "splitting",
            "must be positive",
        )?;
        require(self.g0 >= 0.0 && self.g0.is_finite(), "g0", "must be non-negative")?;
        self.mech.validate()?;
        self.mode(0.0, Polarization::H)?;
        self.mode(0.0, Polarization::V)?;
        Ok(())
    }

    fn mode(&self, detuning: f64, pol: Polarization) -> Result<OpticalMode, ModelError> {
        let power = match pol {
            Polarization::H => self.power_h,
            Polarization::V => self.power_v,
        };
        OpticalMode::new(detuning, self.kappa, power, self.wavelength, pol)?
            .with_coupling_efficiency(self.coupling_efficiency)
    }
}

/// Both modes plus the laser position, measured from the H mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoModeSystem {
    params: TwoModeParams,
    detuning_ref: f64,
}

impl TwoModeSystem {
    pub fn new(params: TwoModeParams, detuning_ref: f64) -> Result<Self, ModelError> {
        params.validate()?;
        require(detuning_ref.is_finite(), "detuning", "must be finite")?;
        Ok(Self {
            params,
            detuning_ref,
        })
    }

    pub fn params(&self) -> &TwoModeParams {
        &self.params
    }

    pub fn detuning_ref(&self) -> f64 {
        self.detuning_ref
    }

    pub fn splitting(&self) -> f64 {
        self.params.splitting
    }

    pub fn g0(&self) -> f64 {
        self.params.g0
    }

    pub fn mech(&self) -> &MechanicalMode {
        &self.params.mech
    }

    /// Same cavity, laser moved to `detuning_ref`.
    pub fn at_detuning(&self, detuning_ref: f64) -> Self {
        Self {
            params: self.params,
            detuning_ref,
        }
    }

    pub fn mode_h(&self) -> OpticalMode {
        self.optical_mode(Polarization::H)
    }

    pub fn mode_v(&self) -> OpticalMode {
        self.optical_mode(Polarization::V)
    }

    fn optical_mode(&self, pol: Polarization) -> OpticalMode {
        let (detuning, input_power) = match pol {
            Polarization::H => (self.detuning_ref, self.params.power_h),
            Polarization::V => (self.detuning_ref - self.params.splitting, self.params.power_v),
        };
        OpticalMode {
            detuning,
            linewidth: self.params.kappa,
            input_power,
            wavelength: self.params.wavelength,
            coupling_efficiency: self.params.coupling_efficiency,
            polarization: pol,
        }
    }
}

/// Per-mode optical spring and damping at one laser setting, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombinedResponse {
    pub spring_h: f64,
    pub spring_v: f64,
    pub damping_h: f64,
    pub damping_v: f64,
    pub gamma_m: f64,
}

impl CombinedResponse {
    pub fn delta_omega(&self) -> f64 {
        self.spring_h + self.spring_v
    }

    pub fn gamma_opt(&self) -> f64 {
        self.damping_h + self.damping_v
    }

    pub fn gamma_eff(&self) -> f64 {
        self.damping_h + self.damping_v + self.gamma_m
    }
}

pub fn combined_response(sys: &TwoModeSystem, detuning_ref: f64) -> CombinedResponse {
    let sys = sys.at_detuning(detuning_ref);
    let (h, v) = (sys.mode_h(), sys.mode_v());
    let (mech, g0) = (sys.mech(), sys.g0());
    CombinedResponse {
        spring_h: optical_spring(&h, mech, g0),
        spring_v: optical_spring(&v, mech, g0),
        damping_h: optical_damping(&h, mech, g0),
        damping_v: optical_damping(&v, mech, g0),
        gamma_m: mech.gamma_m,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    /// Laser detuning from the H mode, rad/s.
    pub detuning_ref: f64,
    pub delta_omega_total: f64,
    pub gamma_eff_total: f64,
    /// `None` when the mode is anti-damped past threshold.
    pub t_eff: Option<f64>,
    pub n_eff: Option<f64>,
}

impl SweepPoint {
    pub fn is_stable(&self) -> bool {
        self.t_eff.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridMeta {
    pub start: f64,
    pub stop: f64,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub system: TwoModeParams,
    pub grid: GridMeta,
}

impl SweepResult {
    pub fn unstable_count(&self) -> usize {
        self.points.iter().filter(|p| !p.is_stable()).count()
    }
}

/// Occupation the mode relaxes to, from the damping-weighted rate balance.
fn steady_state(params: &TwoModeParams, gamma_opt: f64) -> Result<(f64, f64), ModelError> {
    let mech = &params.mech;
    let n_th = equipartition_occupation(mech.bath_temperature, mech.omega_m);
    let n_min = minimum_phonon_number(params.kappa, mech.omega_m);
    let t = effective_temperature(mech.gamma_m, gamma_opt, n_th, n_min, mech.omega_m)?;
    Ok((t, K_B * t / (HBAR * mech.omega_m)))
}

/// Effective temperature at one laser setting, K.
pub fn effective_temperature_at(sys: &TwoModeSystem, detuning_ref: f64) -> Result<f64, ModelError> {
    let r = combined_response(sys, detuning_ref);
    steady_state(sys.params(), r.gamma_opt()).map(|(t, _)| t)
}

pub fn evaluate_point(sys: &TwoModeSystem, detuning_ref: f64) -> SweepPoint {
    let r = combined_response(sys, detuning_ref);
    let state = steady_state(sys.params(), r.gamma_opt()).ok();
    SweepPoint {
        detuning_ref,
        delta_omega_total: r.delta_omega(),
        gamma_eff_total: r.gamma_eff(),
        t_eff: state.map(|s| s.0),
        n_eff: state.map(|s| s.1),
    }
}

fn check_grid(grid: &[f64]) -> Result<(), TwoModeError> {
    if let Some(index) = grid.iter().position(|x| !x.is_finite()) {
        return Err(TwoModeError::InvalidGrid { index });
    }
    if let Some(index) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(TwoModeError::InvalidGrid { index: index + 1 });
    }
    Ok(())
}

/// Evaluate every grid point; unstable points are kept with `t_eff = None`.
pub fn sweep(sys: &TwoModeSystem, grid: &[f64]) -> Result<SweepResult, TwoModeError> {
    check_grid(grid)?;
    let points: Vec<SweepPoint> = grid.par_iter().map(|&d| evaluate_point(sys, d)).collect();
    Ok(SweepResult {
        points,
        system: *sys.params(),
        grid: GridMeta {
            start: grid.first().copied().unwrap_or(0.0),
            stop: grid.last().copied().unwrap_or(0.0),
            len: grid.len(),
        },
    })
}

/// Uniform grid from `start` to `stop` inclusive with spacing `step`.
pub fn uniform_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || stop < start {
        return Vec::new();
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

const CANCELLATION_SCAN: usize = 1000;

/// Laser detuning between the two modes where their optical damping cancels.
///
/// The total damping can cross zero more than once between the mode centers
/// when the mode powers differ; the crossing nearest the midpoint is returned.
pub fn cancellation_detuning(sys: &TwoModeSystem) -> Result<f64, TwoModeError> {
    let p = sys.params();
    if !(p.power_h > 0.0 && p.power_v > 0.0) {
        return Err(TwoModeError::NoCancellation);
    }
    let delta = p.splitting;
    let midpoint = 0.5 * delta;
    let gamma_opt = |d: f64| combined_response(sys, d).gamma_opt();
    if gamma_opt(midpoint) == 0.0 {
        return Ok(midpoint);
    }
    let step = delta / CANCELLATION_SCAN as f64;
    let xs: Vec<f64> = (1..CANCELLATION_SCAN).map(|i| step * i as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| gamma_opt(x)).collect();
    let mut best: Option<f64> = None;
    for i in 0..xs.len() - 1 {
        if vals[i] == 0.0 || vals[i].signum() != vals[i + 1].signum() {
            if let Some(root) = bisect(gamma_opt, xs[i], xs[i + 1], 0.0, 0.0) {
                let closer = best.is_none_or(|b| (root - midpoint).abs() < (b - midpoint).abs());
                if closer {
                    best = Some(root);
                }
            }
        }
    }
    best.ok_or(TwoModeError::NoCancellation)
}

/// Transmitted intensity versus laser offset from the H mode.
///
/// Each mode contributes a unit-peak Lorentzian weighted by the projection of
/// the input polarization at `input_pol_angle` (0 = pure H).
pub fn transmission_scan(
    sys: &TwoModeSystem,
    laser_offsets: &[f64],
    input_pol_angle: f64,
) -> Result<Vec<(f64, f64)>, ModelError> {
    require(
        (0.0..=std::f64::consts::FRAC_PI_2).contains(&input_pol_angle),
        "angle",
        "must lie in [0, π/2]",
    )?;
    let p = sys.params();
    let half = 0.5 * p.kappa;
    let lorentz = |x: f64| half * half / (half * half + x * x);
    let (c2, s2) = (input_pol_angle.cos().powi(2), input_pol_angle.sin().powi(2));
    Ok(laser_offsets
        .iter()
        .map(|&w| (w, c2 * lorentz(w) + s2 * lorentz(w - p.splitting)))
        .collect())
}

/// A proposed device, in the units an experimentalist quotes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignCandidate {
    pub length_m: f64,
    pub kappa_hz: f64,
    pub omega_m_hz: f64,
    pub q: f64,
    pub g0_hz: f64,
    pub power_w: f64,
    pub temperature_k: f64,
    pub wavelength_m: f64,
    /// Splitting measured on a reference cavity, Hz.
    #[serde(default = "DesignCandidate::default_reference_splitting")]
    pub reference_splitting_hz: f64,
    /// Length of that reference cavity, m.
    #[serde(default = "DesignCandidate::default_reference_length")]
    pub reference_length_m: f64,
}

impl DesignCandidate {
    fn default_reference_splitting() -> f64 {
        83e3
    }

    fn default_reference_length() -> f64 {
        0.05
    }

    /// The 1 cm design discussed as the next step for the trampoline cavity.
    pub fn short_cavity_target() -> Self {
        Self {
            length_m: 0.01,
            kappa_hz: 85e3,
            omega_m_hz: 250e3,
            q: 5e5,
            g0_hz: 8.0,
            power_w: 50e-6,
            temperature_k: 1.0,
            wavelength_m: 1064e-9,
            reference_splitting_hz: Self::default_reference_splitting(),
            reference_length_m: Self::default_reference_length(),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("length_m", self.length_m),
            ("kappa_hz", self.kappa_hz),
            ("omega_m_hz", self.omega_m_hz),
            ("q", self.q),
            ("g0_hz", self.g0_hz),
            ("power_w", self.power_w),
            ("wavelength_m", self.wavelength_m),
            ("reference_splitting_hz", self.reference_splitting_hz),
            ("reference_length_m", self.reference_length_m),
        ];
        for (name, v) in fields {
            require(v > 0.0 && v.is_finite(), name, "must be positive")?;
        }
        require(
            self.temperature_k >= 0.0 && self.temperature_k.is_finite(),
            "temperature_k",
            "must be non-negative",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub n_cav: f64,
    pub cooperativity: f64,
    pub n_th: f64,
    /// `C / n_th`; infinite at zero temperature.
    pub ratio: f64,
    pub sideband_resolved: bool,
    pub n_min: f64,
    pub predicted_splitting_hz: f64,
}

/// Cooperativity against thermal occupation for a red-sideband drive.
pub fn design_feasibility(candidate: &DesignCandidate) -> Result<FeasibilityReport, ModelError> {
    candidate.validate()?;
    let kappa = hz_to_rad(candidate.kappa_hz);
    let omega_m = hz_to_rad(candidate.omega_m_hz);
    let gamma_m = omega_m / candidate.q;
    let drive = OpticalMode::new(
        -omega_m,
        kappa,
        candidate.power_w,
        candidate.wavelength_m,
        Polarization::V,
    )?;
    let n_cav = intracavity_photon_number(&drive);
    let c = cooperativity(n_cav, hz_to_rad(candidate.g0_hz), kappa, gamma_m);
    let n_th = thermal_occupation(candidate.temperature_k, omega_m);
    let ratio = if n_th > 0.0 { c / n_th } else { f64::INFINITY };
    Ok(FeasibilityReport {
        n_cav,
        cooperativity: c,
        n_th,
        ratio,
        sideband_resolved: kappa < 4.0 * omega_m,
        n_min: minimum_phonon_number(kappa, omega_m),
        predicted_splitting_hz: candidate.reference_splitting_hz * candidate.reference_length_m
            / candidate.length_m,
    })
}
