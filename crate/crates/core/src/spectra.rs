//! Thermal-noise spectra of the mechanical mode and the fits used to read
//! frequency, linewidth and temperature off them; also cavity ringdown.
//!
//! Spectra live on an ordinary-frequency grid (Hz) with one-sided PSD in m²/Hz.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

use crate::lsq::{covariance, levenberg_marquardt, std_errors, LmError, LmOptions};
use crate::model::{MechanicalMode, ModelError};
use crate::two_mode::{combined_response, effective_temperature_at, TwoModeSystem};
use crate::units::{rad_to_hz, K_B};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("frequency grid must be strictly increasing with matching PSD length")]
    InvalidGrid,
    #[error("no resolvable peak above the noise floor")]
    NoPeak,
    #[error("fit did not converge: {0}")]
    NoConvergence(#[from] LmError),
    #[error("intensity trace is not decaying")]
    NotDecaying,
}

/// Parameters of a Lorentzian line in ordinary frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineShape {
    pub center_hz: f64,
    pub fwhm_hz: f64,
    /// Integral of the line over all frequencies, m².
    pub area: f64,
    /// Flat background, m²/Hz.
    pub offset: f64,
}

impl LineShape {
    pub fn value(&self, f: f64) -> f64 {
        let half = 0.5 * self.fwhm_hz;
        let x = f - self.center_hz;
        self.area * half / (PI * (x * x + half * half)) + self.offset
    }

    pub fn peak(&self) -> f64 {
        2.0 * self.area / (PI * self.fwhm_hz) + self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub detuning_ref_hz: f64,
    pub seed: u64,
    pub rbw_hz: f64,
    pub noise_fraction: f64,
    /// The line the spectrum was generated from, when synthetic.
    pub truth: Option<LineShape>,
    pub t_eff_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    pub freq_hz: Vec<f64>,
    pub psd: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl NoiseSpectrum {
    pub fn new(freq_hz: Vec<f64>, psd: Vec<f64>, meta: SpectrumMeta) -> Result<Self, SpectrumError> {
        let ok = freq_hz.len() == psd.len()
            && freq_hz.len() >= 2
            && freq_hz.iter().all(|f| f.is_finite())
            && freq_hz.windows(2).all(|w| w[1] > w[0])
            && psd.iter().all(|p| *p >= 0.0 && p.is_finite());
        if !ok {
            return Err(SpectrumError::InvalidGrid);
        }
        Ok(Self { freq_hz, psd, meta })
    }

    /// Trapezoid integral of the PSD over the grid, m².
    pub fn integrated_power(&self) -> f64 {
        trapezoid(&self.freq_hz, &self.psd)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

/// Variance of the mode displacement at temperature `t_eff`, m².
pub fn displacement_variance(t_eff: f64, mech: &MechanicalMode) -> f64 {
    K_B * t_eff / (mech.effective_mass * mech.omega_m * mech.omega_m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    /// Relative standard deviation of the per-bin multiplicative noise.
    pub noise_fraction: f64,
    pub seed: u64,
    /// Flat background added before the noise, m²/Hz.
    pub offset: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            noise_fraction: 0.0,
            seed: 0,
            offset: 0.0,
        }
    }
}

/// Render `line` on `grid` with seeded multiplicative Gaussian noise.
pub fn render_line(
    line: &LineShape,
    grid_hz: &[f64],
    noise_fraction: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grid_hz
        .iter()
        .map(|&f| {
            let clean = line.value(f);
            if noise_fraction > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                (clean * (1.0 + noise_fraction * z)).max(0.0)
            } else {
                clean
            }
        })
        .collect()
}

/// Thermal displacement spectrum of the mechanical mode at one laser setting.
///
/// The line sits at the optically shifted frequency with the total damping as
/// its width; its area is the equipartition variance at the effective
/// temperature of that setting.
pub fn synthesize_spectrum(
    sys: &TwoModeSystem,
    detuning_ref: f64,
    grid_hz: &[f64],
    opts: &SynthesisOptions,
) -> Result<NoiseSpectrum, SpectrumError> {
    let response = combined_response(sys, detuning_ref);
    let t_eff = effective_temperature_at(sys, detuning_ref)?;
    let mech = sys.mech();
    let line = LineShape {
        center_hz: rad_to_hz(mech.omega_m + response.delta_omega()),
        fwhm_hz: rad_to_hz(response.gamma_eff()),
        area: displacement_variance(t_eff, mech),
        offset: opts.offset,
    };
    let psd = render_line(&line, grid_hz, opts.noise_fraction, opts.seed);
    let rbw_hz = if grid_hz.len() >= 2 {
        (grid_hz[grid_hz.len() - 1] - grid_hz[0]) / (grid_hz.len() - 1) as f64
    } else {
        0.0
    };
    NoiseSpectrum::new(
        grid_hz.to_vec(),
        psd,
        SpectrumMeta {
            detuning_ref_hz: rad_to_hz(detuning_ref),
            seed: opts.seed,
            rbw_hz,
            noise_fraction: opts.noise_fraction,
            truth: Some(line),
            t_eff_k: Some(t_eff),
        },
    )
}

/// Uniform grid centered on `center_hz`, `half_span` FWHMs each side,
/// `bins_per_fwhm` points per FWHM.
pub fn line_grid(center_hz: f64, fwhm_hz: f64, half_span: f64, bins_per_fwhm: usize) -> Vec<f64> {
    let step = fwhm_hz / bins_per_fwhm as f64;
    let n = (half_span * bins_per_fwhm as f64).round() as i64;
    (-n..=n).map(|i| center_hz + step * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub center: f64,
    pub fwhm: f64,
    pub area: f64,
    pub offset: f64,
    pub center_err: f64,
    pub fwhm_err: f64,
    pub area_err: f64,
    pub offset_err: f64,
    pub residual_rms: f64,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn line(&self) -> LineShape {
        LineShape {
            center_hz: self.center,
            fwhm_hz: self.fwhm,
            area: self.area,
            offset: self.offset,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Robust per-bin noise estimate from the median absolute first difference.
fn noise_sigma(y: &[f64]) -> f64 {
    let diffs: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    median(diffs) / (0.674_489_75 * std::f64::consts::SQRT_2)
}

struct PeakGuess {
    line: LineShape,
}

fn initial_guess(f: &[f64], y: &[f64]) -> Result<PeakGuess, SpectrumError> {
    let n = y.len();
    let edge = (n / 10).max(1);
    let offset = median(y[..edge].iter().chain(&y[n - edge..]).copied().collect()).max(0.0);
    let (imax, ymax) = y
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(SpectrumError::NoPeak)?;
    let height = ymax - offset;
    if !(height > 3.0 * noise_sigma(y)) || height <= 0.0 {
        return Err(SpectrumError::NoPeak);
    }
    let half = offset + 0.5 * height;
    let cross = |i_in: usize, i_out: usize| {
        let t = (y[i_in] - half) / (y[i_in] - y[i_out]);
        f[i_in] + t * (f[i_out] - f[i_in])
    };
    let left = (1..=imax).rev().find(|&i| y[i - 1] < half);
    let right = (imax..n - 1).find(|&i| y[i + 1] < half);
    let (Some(l), Some(r)) = (left, right) else {
        return Err(SpectrumError::NoPeak);
    };
    if r - l + 1 < 3 {
        return Err(SpectrumError::NoPeak);
    }
    let fwhm = cross(r, r + 1) - cross(l, l - 1);
    let area = f
        .windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1] - 2.0 * offset))
        .sum::<f64>();
    if !(fwhm > 0.0 && area > 0.0) {
        return Err(SpectrumError::NoPeak);
    }
    Ok(PeakGuess {
        line: LineShape {
            center_hz: f[imax],
            fwhm_hz: fwhm,
            area,
            offset,
        },
    })
}

fn line_from(p: &DVector<f64>) -> LineShape {
    LineShape {
        center_hz: p[0],
        fwhm_hz: p[1],
        area: p[2],
        offset: p[3],
    }
}

/// One least-squares pass with fixed per-bin weights.
fn weighted_line_fit(
    f: &[f64],
    y: &[f64],
    weights: &[f64],
    init: &LineShape,
) -> Result<crate::lsq::LmReport, LmError> {
    let m = f.len();
    let residuals = |p: &DVector<f64>| {
        let line = line_from(p);
        DVector::from_iterator(
            m,
            f.iter()
                .zip(y)
                .zip(weights)
                .map(|((&fi, &yi), &wi)| wi * (line.value(fi) - yi)),
        )
    };
    let jacobian = |p: &DVector<f64>| {
        let (c, w, a) = (p[0], p[1], p[2]);
        let h = 0.5 * w;
        let mut j = DMatrix::zeros(m, 4);
        for (i, (&fi, &wi)) in f.iter().zip(weights).enumerate() {
            let x = fi - c;
            let d = x * x + h * h;
            j[(i, 0)] = wi * a * h * 2.0 * x / (PI * d * d);
            j[(i, 1)] = wi * a * (d - 2.0 * h * h) / (TAU * d * d);
            j[(i, 2)] = wi * h / (PI * d);
            j[(i, 3)] = wi;
        }
        j
    };
    let init = DVector::from_vec(vec![init.center_hz, init.fwhm_hz, init.area, init.offset]);
    levenberg_marquardt(residuals, jacobian, init, &LmOptions::default())
}

/// Least-squares Lorentzian plus constant background.
///
/// A first unweighted pass locates the line; the second pass weights each
/// bin by the inverse of the first-pass model, matching the multiplicative
/// scatter of an averaged periodogram, and supplies the reported errors.
pub fn fit_lorentzian(spec: &NoiseSpectrum) -> Result<LorentzianFit, SpectrumError> {
    let f = &spec.freq_hz;
    let scale = spec.psd.iter().copied().fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(SpectrumError::NoPeak);
    }
    let y: Vec<f64> = spec.psd.iter().map(|v| v / scale).collect();
    let guess = initial_guess(f, &y)?.line;

    let unit = vec![1.0; f.len()];
    let first = weighted_line_fit(f, &y, &unit, &guess)?;
    let first_line = line_from(&first.params);
    if !(first_line.fwhm_hz > 0.0 && first_line.area > 0.0) {
        return Err(SpectrumError::NoPeak);
    }
    let weights: Vec<f64> = f
        .iter()
        .map(|&fi| {
            let v = first_line.value(fi);
            if v > 0.0 {
                1.0 / v
            } else {
                0.0
            }
        })
        .collect();
    let report = weighted_line_fit(f, &y, &weights, &first_line)?;
    let line = line_from(&report.params);
    if !(line.fwhm_hz > 0.0 && line.area > 0.0) {
        return Err(SpectrumError::NoPeak);
    }
    let errs = covariance(&report.jacobian, report.rss())
        .map(|c| std_errors(&c))
        .unwrap_or_else(|| vec![f64::INFINITY; 4]);
    let rss: f64 = f
        .iter()
        .zip(&y)
        .map(|(&fi, &yi)| (line.value(fi) - yi).powi(2))
        .sum();
    Ok(LorentzianFit {
        center: line.center_hz,
        fwhm: line.fwhm_hz,
        area: line.area * scale,
        offset: line.offset * scale,
        center_err: errs[0],
        fwhm_err: errs[1],
        area_err: errs[2] * scale,
        offset_err: errs[3] * scale,
        residual_rms: (rss / f.len() as f64).sqrt() * scale,
        iterations: first.iterations + report.iterations,
    })
}

/// Equipartition temperature from a fitted line area, K.
pub fn temperature_from_fit(fit: &LorentzianFit, mech: &MechanicalMode) -> f64 {
    mech.effective_mass * mech.omega_m * mech.omega_m * fit.area / K_B
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingdownFit {
    /// Cavity linewidth (FWHM), Hz.
    pub kappa_hz: f64,
    /// Intensity decay time, s.
    pub tau: f64,
    pub tau_err: f64,
    /// Decaying amplitude at the peak sample.
    pub amplitude: f64,
    pub offset: f64,
    pub residual_rms: f64,
}

/// Cavity linewidth (FWHM, Hz) for an intensity decay time.
pub fn kappa_from_tau(tau: f64) -> f64 {
    1.0 / (TAU * tau)
}

/// Intensity decay time for a cavity linewidth (FWHM, Hz).
pub fn tau_from_kappa(kappa_hz: f64) -> f64 {
    1.0 / (TAU * kappa_hz)
}

/// Seeded synthetic ringdown: `I₀ e^(−t/τ) + b` plus Gaussian noise of
/// standard deviation `noise_fraction · I₀`.
pub fn synthesize_ringdown(
    times: &[f64],
    tau: f64,
    amplitude: f64,
    offset: f64,
    noise_fraction: f64,
    seed: u64,
) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    times
        .iter()
        .map(|&t| {
            let z: f64 = if noise_fraction > 0.0 {
                StandardNormal.sample(&mut rng)
            } else {
                0.0
            };
            (t, amplitude * (-t / tau).exp() + offset + noise_fraction * amplitude * z)
        })
        .collect()
}

/// Fit an exponential decay to the samples after the intensity peak.
pub fn ringdown_fit(series: &[(f64, f64)]) -> Result<RingdownFit, SpectrumError> {
    if series.len() < 4 || series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(SpectrumError::InvalidGrid);
    }
    let ipeak = series
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .ok_or(SpectrumError::NotDecaying)?;
    let seg = &series[ipeak..];
    if seg.len() < 4 {
        return Err(SpectrumError::NotDecaying);
    }
    let t0 = seg[0].0;
    let t: Vec<f64> = seg.iter().map(|s| s.0 - t0).collect();
    let y: Vec<f64> = seg.iter().map(|s| s.1).collect();
    let tail = (y.len() / 10).max(1);
    let b0 = median(y[y.len() - tail..].to_vec());
    let a0 = y[0] - b0;
    if !(a0 > 0.0) {
        return Err(SpectrumError::NotDecaying);
    }
    let target = b0 + a0 / std::f64::consts::E;
    let Some(k) = y.iter().position(|&v| v < target) else {
        return Err(SpectrumError::NotDecaying);
    };
    let tau0 = t[k].max(t[1]);

    // fit in units of the guessed decay time and amplitude
    let ts: Vec<f64> = t.iter().map(|v| v / tau0).collect();
    let ys: Vec<f64> = y.iter().map(|v| v / a0).collect();
    let m = ts.len();
    let residuals = |p: &DVector<f64>| {
        DVector::from_iterator(
            m,
            ts.iter()
                .zip(&ys)
                .map(|(&ti, &yi)| p[0] * (-ti / p[1]).exp() + p[2] - yi),
        )
    };
    let jacobian = |p: &DVector<f64>| {
        let mut j = DMatrix::zeros(m, 3);
        for (i, &ti) in ts.iter().enumerate() {
            let e = (-ti / p[1]).exp();
            j[(i, 0)] = e;
            j[(i, 1)] = p[0] * e * ti / (p[1] * p[1]);
            j[(i, 2)] = 1.0;
        }
        j
    };
    let init = DVector::from_vec(vec![1.0, 1.0, b0 / a0]);
    let report = levenberg_marquardt(residuals, jacobian, init, &LmOptions::default())?;
    let p = &report.params;
    let tau = p[1] * tau0;
    if !(tau > 0.0 && p[0] > 0.0) || !tau.is_finite() {
        return Err(SpectrumError::NotDecaying);
    }
    let tau_err = covariance(&report.jacobian, report.rss())
        .map(|c| std_errors(&c)[1] * tau0)
        .unwrap_or(f64::INFINITY);
    Ok(RingdownFit {
        kappa_hz: kappa_from_tau(tau),
        tau,
        tau_err,
        amplitude: p[0] * a0,
        offset: p[2] * a0,
        residual_rms: report.residual_rms() * a0,
    })
}
