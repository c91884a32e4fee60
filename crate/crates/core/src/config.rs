//! Run configuration: a JSON object with one flat block per concern.
//!
//! Every key is spelled without a unit suffix and carries the unit listed
//! next to it below; frequencies are ordinary frequencies in Hz and are
//! converted to angular units only when building the model.
//!
//! ```json
//! {
//!   "system": { "kappa": 52e3, "splitting": 82.4e3, "power_h": 2.19e-6, ... },
//!   "sweep": { "start": -250e3, "stop": 250e3, "step": 1e3 },
//!   "synthesis": { "noise_fraction": 0.05, "seed": 7 },
//!   "thermometry": { "n": 1.0 },
//!   "curvature": { "file": "surface.txt", "r_max": 15e-6, "angle_step": 5 }
//! }
//! ```
//!
//! Omitted blocks and keys take the defaults of the lab experiment.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::PathBuf;
use thiserror::Error;

use crate::global_fit::FixedParams;
use crate::model::MechanicalMode;
use crate::two_mode::{uniform_grid, TwoModeParams};
use crate::units::hz_to_rad;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config key `{key}`: {reason}")]
    Validation { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        Self::Validation {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    /// The offending key, for validation errors.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Validation { key, .. } => Some(key),
            Self::Parse(_) => None,
        }
    }
}

/// Cavity, drive and mechanics. Hz, W, m, kg, K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    /// Cavity linewidth (FWHM), Hz.
    pub kappa: f64,
    /// V-mode minus H-mode frequency, Hz.
    pub splitting: f64,
    pub power_h: f64,
    pub power_v: f64,
    pub wavelength: f64,
    pub coupling_efficiency: f64,
    /// Single-photon coupling, Hz.
    pub g0: f64,
    /// Mechanical frequency, Hz.
    pub omega_m: f64,
    /// Intrinsic mechanical linewidth, Hz.
    pub gamma_m: f64,
    pub effective_mass: f64,
    pub bath_temperature: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            kappa: 52e3,
            splitting: 82.4e3,
            power_h: 2.19e-6,
            power_v: 1.85e-6,
            wavelength: 1064e-9,
            coupling_efficiency: 1.0,
            g0: 0.2,
            omega_m: 222e3,
            gamma_m: 19.0,
            effective_mass: 100e-12,
            bath_temperature: 300.0,
        }
    }
}

/// Laser detuning grid measured from the H mode, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start: -250e3,
            stop: 250e3,
            step: 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub noise_fraction: f64,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            noise_fraction: 0.0,
            seed: 0,
        }
    }
}

/// Either a known occupation `n` (forward model) or a measured H/V power
/// `ratio` (inversion). `detuning` (Hz from H) defaults to the midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThermometryConfig {
    pub n: Option<f64>,
    pub ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detuning: Option<f64>,
    pub carrier_amplitude: f64,
}

impl Default for ThermometryConfig {
    fn default() -> Self {
        Self {
            n: Some(1.0),
            ratio: None,
            detuning: None,
            carrier_amplitude: 1.0,
        }
    }
}

/// Height-map analysis. `r_max` in m, `angle_step` in degrees,
/// `cavity_length` in m (for the splitting estimate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurvatureConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub r_max: f64,
    pub angle_step: f64,
    pub cavity_length: f64,
}

impl Default for CurvatureConfig {
    fn default() -> Self {
        Self {
            file: None,
            r_max: crate::curvature::DEFAULT_R_MAX,
            angle_step: crate::curvature::DEFAULT_ANGLE_STEP_DEG,
            cavity_length: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub system: SystemConfig,
    pub sweep: SweepConfig,
    pub synthesis: SynthesisConfig,
    pub thermometry: ThermometryConfig,
    pub curvature: CurvatureConfig,
}

const BLOCKS: [(&str, &[&str]); 5] = [
    (
        "system",
        &[
            "kappa",
            "splitting",
            "power_h",
            "power_v",
            "wavelength",
            "coupling_efficiency",
            "g0",
            "omega_m",
            "gamma_m",
            "effective_mass",
            "bath_temperature",
        ],
    ),
    ("sweep", &["start", "stop", "step"]),
    ("synthesis", &["noise_fraction", "seed"]),
    ("thermometry", &["n", "ratio", "detuning", "carrier_amplitude"]),
    ("curvature", &["file", "r_max", "angle_step", "cavity_length"]),
];

fn check_keys(root: &Map<String, Value>) -> Result<(), ConfigError> {
    for (block, value) in root {
        let Some((_, allowed)) = BLOCKS.iter().find(|(name, _)| name == block) else {
            return Err(ConfigError::invalid(block, "unknown block"));
        };
        let Value::Object(fields) = value else {
            return Err(ConfigError::invalid(block, "block must be an object"));
        };
        for key in fields.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(ConfigError::invalid(key, format!("unknown key in `{block}`")));
            }
        }
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let Value::Object(root) = &value else {
        return Err(ConfigError::Parse("top level must be an object".into()));
    };
    check_keys(root)?;
    let config: Config = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(key, format!("must be positive, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(key, format!("must be non-negative, got {v}")))
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.system;
        positive("kappa", s.kappa)?;
        positive("splitting", s.splitting)?;
        non_negative("power_h", s.power_h)?;
        non_negative("power_v", s.power_v)?;
        positive("wavelength", s.wavelength)?;
        if !(s.coupling_efficiency > 0.0 && s.coupling_efficiency <= 1.0) {
            return Err(ConfigError::invalid("coupling_efficiency", "must lie in (0, 1]"));
        }
        non_negative("g0", s.g0)?;
        positive("omega_m", s.omega_m)?;
        positive("gamma_m", s.gamma_m)?;
        positive("effective_mass", s.effective_mass)?;
        non_negative("bath_temperature", s.bath_temperature)?;

        let w = &self.sweep;
        if !w.start.is_finite() {
            return Err(ConfigError::invalid("start", "must be finite"));
        }
        if !(w.stop.is_finite() && w.stop >= w.start) {
            return Err(ConfigError::invalid("stop", "must be finite and not below start"));
        }
        positive("step", w.step)?;

        let y = &self.synthesis;
        if !(y.noise_fraction >= 0.0 && y.noise_fraction < 1.0) {
            return Err(ConfigError::invalid("noise_fraction", "must lie in [0, 1)"));
        }

        let t = &self.thermometry;
        match (t.n, t.ratio) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::invalid("ratio", "give either `n` or `ratio`, not both"))
            }
            (Some(n), None) => non_negative("n", n)?,
            (None, Some(r)) => positive("ratio", r)?,
            (None, None) => return Err(ConfigError::invalid("n", "one of `n` or `ratio` is required")),
        }
        if let Some(d) = t.detuning {
            if !d.is_finite() {
                return Err(ConfigError::invalid("detuning", "must be finite"));
            }
        }
        positive("carrier_amplitude", t.carrier_amplitude)?;

        let c = &self.curvature;
        positive("r_max", c.r_max)?;
        if !(c.angle_step > 0.0 && c.angle_step <= 360.0) {
            return Err(ConfigError::invalid("angle_step", "must lie in (0, 360] degrees"));
        }
        positive("cavity_length", c.cavity_length)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn mechanical_mode(&self) -> MechanicalMode {
        let s = &self.system;
        MechanicalMode {
            omega_m: hz_to_rad(s.omega_m),
            gamma_m: hz_to_rad(s.gamma_m),
            effective_mass: s.effective_mass,
            bath_temperature: s.bath_temperature,
        }
    }

    pub fn two_mode_params(&self) -> TwoModeParams {
        let s = &self.system;
        TwoModeParams {
            kappa: hz_to_rad(s.kappa),
            splitting: hz_to_rad(s.splitting),
            power_h: s.power_h,
            power_v: s.power_v,
            wavelength: s.wavelength,
            coupling_efficiency: s.coupling_efficiency,
            g0: hz_to_rad(s.g0),
            mech: self.mechanical_mode(),
        }
    }

    pub fn fixed_params(&self) -> FixedParams {
        let s = &self.system;
        FixedParams {
            mech: self.mechanical_mode(),
            g0: hz_to_rad(s.g0),
            wavelength: s.wavelength,
            coupling_efficiency: s.coupling_efficiency,
        }
    }

    /// Sweep grid, rad/s.
    pub fn detuning_grid(&self) -> Vec<f64> {
        let w = &self.sweep;
        uniform_grid(w.start, w.stop, w.step)
            .into_iter()
            .map(hz_to_rad)
            .collect()
    }
}
