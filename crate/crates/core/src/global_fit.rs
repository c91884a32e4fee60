//! Simultaneous fit of the frequency shift and damping curves.
//!
//! Four parameters are free: the shared linewidth, the mode splitting and the
//! power in each polarization mode. Everything else (mechanics, g0,
//! wavelength, coupling) is held fixed. The fit runs in log-parameters so the
//! parameters stay positive; residuals of each observable are divided by that
//! observable's sample standard deviation so shifts and widths carry equal
//! weight.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lsq::{covariance, levenberg_marquardt, scaled_rcond, std_errors, LmError, LmOptions};
use crate::model::MechanicalMode;
use crate::two_mode::{SweepPoint, TwoModeParams};
use crate::units::{hz_to_rad, optical_angular_frequency, rad_to_hz, HBAR};

/// Fits whose scaled normal matrix is worse conditioned than this are rejected.
pub const DEGENERACY_RCOND: f64 = 1e-7;

pub const MIN_OBSERVATIONS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlobalFitError {
    #[error("need at least {MIN_OBSERVATIONS} observations, got {0}")]
    TooFewObservations(usize),
    #[error("initial parameters must be positive and finite")]
    InvalidInit,
    #[error(transparent)]
    NoConvergence(#[from] LmError),
    #[error("data cannot separate the four parameters (rcond {rcond:.3e})")]
    DegenerateFit { rcond: f64 },
}

/// One measured laser setting, angular units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub detuning_ref: f64,
    pub delta_omega: f64,
    pub gamma_eff: f64,
}

impl From<&SweepPoint> for Observation {
    fn from(p: &SweepPoint) -> Self {
        Self {
            detuning_ref: p.detuning_ref,
            delta_omega: p.delta_omega_total,
            gamma_eff: p.gamma_eff_total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    pub mech: MechanicalMode,
    /// rad/s
    pub g0: f64,
    pub wavelength: f64,
    pub coupling_efficiency: f64,
}

/// The four free parameters, in the units they are reported in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub kappa_hz: f64,
    pub splitting_hz: f64,
    pub power_h: f64,
    pub power_v: f64,
}

impl FitParams {
    pub fn to_array(&self) -> [f64; 4] {
        [self.kappa_hz, self.splitting_hz, self.power_h, self.power_v]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            kappa_hz: a[0],
            splitting_hz: a[1],
            power_h: a[2],
            power_v: a[3],
        }
    }

    pub fn from_system(p: &TwoModeParams) -> Self {
        Self {
            kappa_hz: rad_to_hz(p.kappa),
            splitting_hz: rad_to_hz(p.splitting),
            power_h: p.power_h,
            power_v: p.power_v,
        }
    }

    pub fn to_system(&self, fixed: &FixedParams) -> TwoModeParams {
        TwoModeParams {
            kappa: hz_to_rad(self.kappa_hz),
            splitting: hz_to_rad(self.splitting_hz),
            power_h: self.power_h,
            power_v: self.power_v,
            wavelength: fixed.wavelength,
            coupling_efficiency: fixed.coupling_efficiency,
            g0: fixed.g0,
            mech: fixed.mech,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalFitResult {
    pub params: FitParams,
    /// Ordered as `FitParams::to_array`; Hz², Hz·W, W².
    pub covariance: [[f64; 4]; 4],
    pub std_errors: [f64; 4],
    /// RMS of the standard-deviation-normalized residuals.
    pub residual_rms: f64,
    pub rcond: f64,
    pub iterations: usize,
}

/// Spring and damping of one mode plus their derivatives in κ and Δ.
#[derive(Debug, Clone, Copy)]
struct ModeTerms {
    spring: f64,
    damping: f64,
    spring_dk: f64,
    spring_dd: f64,
    damping_dk: f64,
    damping_dd: f64,
}

fn mode_terms(detuning: f64, kappa: f64, power: f64, fixed: &FixedParams) -> ModeTerms {
    let om = fixed.mech.omega_m;
    let g2 = fixed.g0 * fixed.g0;
    let hk = 0.5 * kappa;
    let hk2 = hk * hk;
    let lor = hk2 + detuning * detuning;
    let n = fixed.coupling_efficiency * kappa * power
        / (HBAR * optical_angular_frequency(fixed.wavelength) * lor);
    let n_dk = n / kappa - n * hk / lor;
    let n_dd = -n * 2.0 * detuning / lor;

    let (xp, xm) = (detuning + om, detuning - om);
    let (a, b) = (hk2 + xp * xp, hk2 + xm * xm);
    let bg = kappa / a - kappa / b;
    let bg_dk = 1.0 / a - kappa * hk / (a * a) - 1.0 / b + kappa * hk / (b * b);
    let bg_dd = -kappa * 2.0 * xp / (a * a) + kappa * 2.0 * xm / (b * b);
    let bs = xp / a + xm / b;
    let bs_dk = -xp * hk / (a * a) - xm * hk / (b * b);
    let bs_dd = 1.0 / a - 2.0 * xp * xp / (a * a) + 1.0 / b - 2.0 * xm * xm / (b * b);

    ModeTerms {
        spring: g2 * n * bs,
        damping: g2 * n * bg,
        spring_dk: g2 * (n_dk * bs + n * bs_dk),
        spring_dd: g2 * (n_dd * bs + n * bs_dd),
        damping_dk: g2 * (n_dk * bg + n * bg_dk),
        damping_dd: g2 * (n_dd * bg + n * bg_dd),
    }
}

fn sample_std(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    (v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Normalized residual problem in log-parameters.
pub struct GlobalProblem<'a> {
    obs: &'a [Observation],
    fixed: FixedParams,
    sigma_shift: f64,
    sigma_damping: f64,
}

impl<'a> GlobalProblem<'a> {
    pub fn new(obs: &'a [Observation], fixed: FixedParams) -> Self {
        let floor = |s: f64| if s > 0.0 && s.is_finite() { s } else { 1.0 };
        Self {
            obs,
            fixed,
            sigma_shift: floor(sample_std(obs.iter().map(|o| o.delta_omega))),
            sigma_damping: floor(sample_std(obs.iter().map(|o| o.gamma_eff))),
        }
    }

    fn unpack(q: &DVector<f64>) -> (f64, f64, f64, f64) {
        (hz_to_rad(q[0].exp()), hz_to_rad(q[1].exp()), q[2].exp(), q[3].exp())
    }

    /// Residuals: all shift residuals first, then all damping residuals.
    pub fn residuals(&self, q: &DVector<f64>) -> DVector<f64> {
        let (kappa, split, ph, pv) = Self::unpack(q);
        let m = self.obs.len();
        let mut r = DVector::zeros(2 * m);
        for (i, o) in self.obs.iter().enumerate() {
            let h = mode_terms(o.detuning_ref, kappa, ph, &self.fixed);
            let v = mode_terms(o.detuning_ref - split, kappa, pv, &self.fixed);
            r[i] = (h.spring + v.spring - o.delta_omega) / self.sigma_shift;
            r[m + i] = (h.damping + v.damping + self.fixed.mech.gamma_m - o.gamma_eff)
                / self.sigma_damping;
        }
        r
    }

    pub fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (kappa, split, _, _) = Self::unpack(q);
        let (ph, pv) = (q[2].exp(), q[3].exp());
        let m = self.obs.len();
        let mut j = DMatrix::zeros(2 * m, 4);
        for (i, o) in self.obs.iter().enumerate() {
            let h = mode_terms(o.detuning_ref, kappa, ph, &self.fixed);
            let v = mode_terms(o.detuning_ref - split, kappa, pv, &self.fixed);
            let (ss, sd) = (self.sigma_shift, self.sigma_damping);
            // d/d(log κ) = κ d/dκ, d/d(log δ) = −δ d/dΔ_v, d/d(log P) = own term
            j[(i, 0)] = kappa * (h.spring_dk + v.spring_dk) / ss;
            j[(i, 1)] = -split * v.spring_dd / ss;
            j[(i, 2)] = h.spring / ss;
            j[(i, 3)] = v.spring / ss;
            j[(m + i, 0)] = kappa * (h.damping_dk + v.damping_dk) / sd;
            j[(m + i, 1)] = -split * v.damping_dd / sd;
            j[(m + i, 2)] = h.damping / sd;
            j[(m + i, 3)] = v.damping / sd;
        }
        j
    }

    pub fn log_params(p: &FitParams) -> DVector<f64> {
        DVector::from_iterator(4, p.to_array().iter().map(|v| v.ln()))
    }
}

pub fn global_fit(
    observations: &[Observation],
    fixed: &FixedParams,
    init: &FitParams,
) -> Result<GlobalFitResult, GlobalFitError> {
    if observations.len() < MIN_OBSERVATIONS {
        return Err(GlobalFitError::TooFewObservations(observations.len()));
    }
    if init.to_array().iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(GlobalFitError::InvalidInit);
    }
    let problem = GlobalProblem::new(observations, *fixed);
    let q0 = GlobalProblem::log_params(init);
    let rcond0 = scaled_rcond(&problem.jacobian(&q0));
    if !(rcond0 >= DEGENERACY_RCOND) {
        return Err(GlobalFitError::DegenerateFit { rcond: rcond0 });
    }
    let report = levenberg_marquardt(
        |q| problem.residuals(q),
        |q| problem.jacobian(q),
        q0,
        &LmOptions::default(),
    )?;
    let rcond = scaled_rcond(&report.jacobian);
    if !(rcond >= DEGENERACY_RCOND) {
        return Err(GlobalFitError::DegenerateFit { rcond });
    }
    let values: [f64; 4] = std::array::from_fn(|k| report.params[k].exp());
    let log_cov = covariance(&report.jacobian, report.rss())
        .ok_or(GlobalFitError::DegenerateFit { rcond })?;
    let mut cov = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            cov[a][b] = values[a] * values[b] * log_cov[(a, b)];
        }
    }
    let errs = std_errors(&DMatrix::from_fn(4, 4, |a, b| cov[a][b]));
    Ok(GlobalFitResult {
        params: FitParams::from_array(values),
        covariance: cov,
        std_errors: [errs[0], errs[1], errs[2], errs[3]],
        residual_rms: report.residual_rms(),
        rcond,
        iterations: report.iterations,
    })
}

/// Additive Gaussian noise on both observables, with standard deviation
/// `noise_fraction` times the largest optically induced magnitude of each.
pub fn perturb_observations(
    obs: &[Observation],
    gamma_m: f64,
    noise_fraction: f64,
    seed: u64,
) -> Vec<Observation> {
    let shift_scale = obs.iter().map(|o| o.delta_omega.abs()).fold(0.0, f64::max);
    let damping_scale = obs
        .iter()
        .map(|o| (o.gamma_eff - gamma_m).abs())
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    obs.iter()
        .map(|o| {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            Observation {
                detuning_ref: o.detuning_ref,
                delta_omega: o.delta_omega + noise_fraction * shift_scale * z1,
                gamma_eff: o.gamma_eff + noise_fraction * damping_scale * z2,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsq::numeric_jacobian;
    use crate::two_mode::{sweep, uniform_grid, TwoModeSystem};
    use proptest::prelude::*;

    fn fixed() -> FixedParams {
        FixedParams {
            mech: MechanicalMode::new(hz_to_rad(222e3), hz_to_rad(19.0), 100e-12, 300.0).unwrap(),
            g0: hz_to_rad(0.2),
            wavelength: 1064e-9,
            coupling_efficiency: 1.0,
        }
    }

    fn truth() -> FitParams {
        FitParams {
            kappa_hz: 52e3,
            splitting_hz: 82.4e3,
            power_h: 2.19e-6,
            power_v: 1.85e-6,
        }
    }

    fn observations(p: &FitParams, grid_hz: (f64, f64, f64)) -> Vec<Observation> {
        let sys = TwoModeSystem::new(p.to_system(&fixed()), 0.0).unwrap();
        let grid = uniform_grid(hz_to_rad(grid_hz.0), hz_to_rad(grid_hz.1), hz_to_rad(grid_hz.2));
        sweep(&sys, &grid).unwrap().points.iter().map(Observation::from).collect()
    }

    #[test]
    fn residuals_vanish_at_truth() {
        let obs = observations(&truth(), (-300e3, 300e3, 10e3));
        let pb = GlobalProblem::new(&obs, fixed());
        let r = pb.residuals(&GlobalProblem::log_params(&truth()));
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn noiseless_recovery_from_perturbed_start() {
        let obs = observations(&truth(), (-300e3, 300e3, 10e3));
        let signs = [[1.3, 0.7, 1.3, 0.7], [0.7, 1.3, 0.7, 1.3], [1.3, 1.3, 0.7, 0.7]];
        for s in signs {
            let t = truth().to_array();
            let init = FitParams::from_array(std::array::from_fn(|k| t[k] * s[k]));
            let fit = global_fit(&obs, &fixed(), &init).unwrap();
            let got = fit.params.to_array();
            for k in 0..4 {
                assert!((got[k] - t[k]).abs() / t[k] < 1e-6, "{s:?} param {k}: {}", got[k]);
            }
        }
    }

    #[test]
    fn covariance_symmetric_psd() {
        let obs = perturb_observations(&observations(&truth(), (-300e3, 300e3, 10e3)), fixed().mech.gamma_m, 0.05, 3);
        let fit = global_fit(&obs, &fixed(), &truth()).unwrap();
        let c = DMatrix::from_fn(4, 4, |a, b| fit.covariance[a][b]);
        assert!((&c - c.transpose()).amax() <= 1e-12 * c.amax());
        let eig = c.clone().symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e >= -1e-12 * c.amax()));
        assert!(fit.std_errors.iter().all(|e| *e > 0.0));
    }

    #[test]
    fn far_detuned_data_is_degenerate() {
        let obs = observations(&truth(), (10e6, 50e6, 1e6));
        let err = global_fit(&obs, &fixed(), &truth()).unwrap_err();
        assert!(matches!(err, GlobalFitError::DegenerateFit { .. }), "{err:?}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let obs = observations(&truth(), (-300e3, 300e3, 100e3));
        assert_eq!(obs.len(), 7);
        assert_eq!(global_fit(&obs, &fixed(), &truth()).unwrap_err(), GlobalFitError::TooFewObservations(7));
        let obs = observations(&truth(), (-300e3, 300e3, 10e3));
        let mut bad = truth();
        bad.power_v = 0.0;
        assert_eq!(global_fit(&obs, &fixed(), &bad).unwrap_err(), GlobalFitError::InvalidInit);
    }

    #[test]
    fn perturbation_is_seeded() {
        let obs = observations(&truth(), (-300e3, 300e3, 10e3));
        let g = fixed().mech.gamma_m;
        assert_eq!(perturb_observations(&obs, g, 0.05, 9), perturb_observations(&obs, g, 0.05, 9));
        assert_ne!(perturb_observations(&obs, g, 0.05, 9), perturb_observations(&obs, g, 0.05, 10));
        assert_eq!(perturb_observations(&obs, g, 0.0, 9), obs);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn analytic_jacobian_matches_finite_differences(
            k in 20e3f64..120e3,
            d in 30e3f64..300e3,
            ph in 0.5e-6f64..5e-6,
            pv in 0.5e-6f64..5e-6,
        ) {
            let obs = observations(&truth(), (-300e3, 300e3, 20e3));
            let pb = GlobalProblem::new(&obs, fixed());
            let q = GlobalProblem::log_params(&FitParams { kappa_hz: k, splitting_hz: d, power_h: ph, power_v: pv });
            let an = pb.jacobian(&q);
            // log-parameters are O(10); absolute steps of ~1e-6 are appropriate
            let num = numeric_jacobian(|x| pb.residuals(x), &q, 1e-7);
            for c in 0..4 {
                let col_scale = an.column(c).amax();
                for r in 0..an.nrows() {
                    let diff = (an[(r, c)] - num[(r, c)]).abs();
                    prop_assert!(diff <= 1e-6 * col_scale, "r{} c{}: {} vs {}", r, c, an[(r, c)], num[(r, c)]);
                }
            }
        }
    }
}
