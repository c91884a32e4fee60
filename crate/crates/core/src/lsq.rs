//! Damped Gauss–Newton (Levenberg–Marquardt) least squares.
//!
//! Minimizes `½‖r(p)‖²`. The damping term is Marquardt's: the normal matrix is
//! scaled to unit diagonal before `λ` is added, so the iteration is invariant
//! to the units of individual parameters.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("no convergence after {iterations} iterations (cost {cost:.6e})")]
    NoConvergence { iterations: usize, cost: f64 },
    #[error("residuals are not finite at the initial point")]
    NonFiniteStart,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged once every relative parameter step falls below this.
    pub x_rtol: f64,
    /// Converged once an accepted step reduces the cost by less than this fraction.
    pub f_rtol: f64,
    pub lambda_init: f64,
    pub lambda_factor: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            x_rtol: 1e-10,
            f_rtol: 1e-15,
            lambda_init: 1e-3,
            lambda_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub params: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Jacobian at `params`.
    pub jacobian: DMatrix<f64>,
    /// `½‖r‖²` at `params`.
    pub cost: f64,
    pub iterations: usize,
}

impl LmReport {
    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }

    pub fn residual_rms(&self) -> f64 {
        (self.rss() / self.residuals.len() as f64).sqrt()
    }
}

const LAMBDA_MAX: f64 = 1e20;

fn half_norm2(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

fn column_scale(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        a.nrows(),
        (0..a.nrows()).map(|i| {
            let d = a[(i, i)];
            if d > 0.0 && d.is_finite() {
                d.sqrt()
            } else {
                1.0
            }
        }),
    )
}

pub fn levenberg_marquardt<R, J>(
    residuals: R,
    jacobian: J,
    init: DVector<f64>,
    opts: &LmOptions,
) -> Result<LmReport, LmError>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut p = init;
    let mut r = residuals(&p);
    if r.iter().any(|x| !x.is_finite()) {
        return Err(LmError::NonFiniteStart);
    }
    let mut cost = half_norm2(&r);
    let mut jac = jacobian(&p);
    let mut lambda = opts.lambda_init;
    let n = p.len();

    for iteration in 1..=opts.max_iterations {
        if cost == 0.0 {
            return Ok(LmReport { params: p, residuals: r, jacobian: jac, cost, iterations: iteration - 1 });
        }
        let jt = jac.transpose();
        let normal = &jt * &jac;
        let gradient = &jt * &r;
        let scale = column_scale(&normal);

        let mut accepted = None;
        while lambda <= LAMBDA_MAX {
            let mut a = normal.clone();
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] /= scale[i] * scale[j];
                }
                a[(i, i)] += lambda;
            }
            let rhs = -gradient.component_div(&scale);
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&rhs).component_div(&scale),
                None => {
                    lambda *= opts.lambda_factor;
                    continue;
                }
            };
            let trial = &p + &step;
            let r_trial = residuals(&trial);
            let cost_trial = half_norm2(&r_trial);
            if cost_trial.is_finite() && cost_trial < cost {
                lambda = (lambda / opts.lambda_factor).max(1e-12);
                accepted = Some((step, trial, r_trial, cost_trial));
                break;
            }
            lambda *= opts.lambda_factor;
        }

        let Some((step, trial, r_trial, cost_trial)) = accepted else {
            // no descent direction left at machine precision
            return Ok(LmReport { params: p, residuals: r, jacobian: jac, cost, iterations: iteration });
        };

        let rel_step = step
            .iter()
            .zip(trial.iter())
            .map(|(s, x)| s.abs() / x.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        let rel_drop = (cost - cost_trial) / cost;
        p = trial;
        r = r_trial;
        cost = cost_trial;
        jac = jacobian(&p);
        if rel_step < opts.x_rtol || rel_drop < opts.f_rtol {
            return Ok(LmReport { params: p, residuals: r, jacobian: jac, cost, iterations: iteration });
        }
    }
    Err(LmError::NoConvergence {
        iterations: opts.max_iterations,
        cost,
    })
}

/// Reciprocal condition number of `JᵀJ` after scaling it to unit diagonal.
pub fn scaled_rcond(jacobian: &DMatrix<f64>) -> f64 {
    let normal = jacobian.transpose() * jacobian;
    let scale = column_scale(&normal);
    let n = normal.nrows();
    let mut a = normal;
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] /= scale[i] * scale[j];
        }
    }
    let sv = a.singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0.0;
    }
    sv.min() / max
}

/// Parameter covariance `s² (JᵀJ)⁻¹` with `s² = RSS / (m − n)`.
pub fn covariance(jacobian: &DMatrix<f64>, rss: f64) -> Option<DMatrix<f64>> {
    let (m, n) = jacobian.shape();
    let dof = m.checked_sub(n).filter(|&d| d > 0)?;
    let normal = jacobian.transpose() * jacobian;
    let scale = column_scale(&normal);
    let mut a = normal;
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] /= scale[i] * scale[j];
        }
    }
    let inv = a.try_inverse()?;
    let s2 = rss / dof as f64;
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] = s2 * inv[(i, j)] / (scale[i] * scale[j]);
        }
    }
    // symmetrize away rounding
    let cov = (&cov + cov.transpose()) * 0.5;
    Some(cov)
}

pub fn std_errors(cov: &DMatrix<f64>) -> Vec<f64> {
    (0..cov.nrows()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect()
}

/// Central-difference Jacobian, used to cross-check analytic derivatives.
pub fn numeric_jacobian<R>(residuals: R, p: &DVector<f64>, rel_step: f64) -> DMatrix<f64>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = residuals(p).len();
    let mut jac = DMatrix::zeros(m, p.len());
    for j in 0..p.len() {
        let h = rel_step * p[j].abs().max(1e-300);
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus[j] += h;
        minus[j] -= h;
        let col = (residuals(&plus) - residuals(&minus)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}
