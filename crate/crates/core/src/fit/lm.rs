//! Levenberg–Marquardt least squares with a Nelder–Mead fallback.
//!
//! The damped normal equations `(JᵀJ + λI) δ = −Jᵀr` are solved by Cholesky.
//! λ starts at `1e-3 · max diag(JᵀJ)` and is divided by ten on every
//! accepted step and multiplied by ten on every rejected one. When λ grows
//! past `LAMBDA_CEILING · max diag(JᵀJ)` the trust region has collapsed and
//! the search continues with a simplex method from the best point so far.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::TimeTrace;

const LAMBDA_CEILING: f64 = 1e16;
/// Value substituted for non-positive model outputs in log10 loss space.
const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossSpace {
    #[default]
    Linear,
    Log10,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative parameter change that counts as converged.
    pub xtol: f64,
    /// Relative cost change that counts as converged.
    pub ftol: f64,
    /// Absolute gradient norm (∞-norm of Jᵀr) that counts as converged.
    pub gtol: f64,
    /// Evaluate Jacobian columns on the rayon pool.
    pub parallel: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-8,
            ftol: 1e-10,
            gtol: 1e-14,
            parallel: true,
        }
    }
}

pub type ModelFn<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a;
/// Derivative of the model (not the residual) with respect to the parameters,
/// one row per data point.
pub type JacobianFn<'a> = dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Sync + 'a;

pub struct FitProblem<'a> {
    pub model: Box<ModelFn<'a>>,
    pub data: TimeTrace,
    pub init: Vec<f64>,
    pub bounds: Option<Vec<(f64, f64)>>,
    pub loss_space: LossSpace,
    pub jacobian: Option<Box<JacobianFn<'a>>>,
    pub options: LmOptions,
}

impl<'a> FitProblem<'a> {
    pub fn new(
        model: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a,
        data: TimeTrace,
        init: Vec<f64>,
    ) -> Self {
        Self {
            model: Box::new(model),
            data,
            init,
            bounds: None,
            loss_space: LossSpace::Linear,
            jacobian: None,
            options: LmOptions::default(),
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn with_loss_space(mut self, loss: LossSpace) -> Self {
        self.loss_space = loss;
        self
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[f64]) -> Result<DMatrix<f64>> + Sync + 'a) -> Self {
        self.jacobian = Some(Box::new(jac));
        self
    }

    pub fn with_options(mut self, options: LmOptions) -> Self {
        self.options = options;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.init.is_empty() {
            return Err(Error::InvalidInput("no parameters to fit".into()));
        }
        if self.init.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("initial parameters must be finite".into()));
        }
        if self.data.len() < self.init.len() {
            return Err(Error::InvalidInput(format!(
                "{} data points cannot constrain {} parameters",
                self.data.len(),
                self.init.len()
            )));
        }
        if let Some(b) = &self.bounds {
            if b.len() != self.init.len() {
                return Err(Error::InvalidInput("one bound pair per parameter required".into()));
            }
            for (i, ((lo, hi), p)) in b.iter().zip(&self.init).enumerate() {
                if !(lo <= hi) || *p < *lo || *p > *hi {
                    return Err(Error::InvalidInput(format!(
                        "parameter {i} = {p} outside bounds [{lo}, {hi}]"
                    )));
                }
            }
        }
        if self.loss_space == LossSpace::Log10 && self.data.y().iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidInput("log10 loss needs strictly positive data".into()));
        }
        Ok(())
    }

    fn clamp(&self, p: &mut [f64]) {
        if let Some(b) = &self.bounds {
            for (v, (lo, hi)) in p.iter_mut().zip(b) {
                *v = v.clamp(*lo, *hi);
            }
        }
    }

    fn transform(&self, v: f64) -> f64 {
        match self.loss_space {
            LossSpace::Linear => v,
            LossSpace::Log10 => v.max(LOG_FLOOR).log10(),
        }
    }

    fn predict(&self, p: &[f64]) -> Result<Vec<f64>> {
        let y = (self.model)(p)?;
        if y.len() != self.data.len() {
            return Err(Error::InvalidInput(format!(
                "model returned {} values for {} data points",
                y.len(),
                self.data.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation(p.to_vec()));
        }
        Ok(y)
    }

    /// Residual vector in the chosen loss space.
    pub fn residuals(&self, p: &[f64]) -> Result<DVector<f64>> {
        let y = self.predict(p)?;
        Ok(DVector::from_iterator(
            y.len(),
            y.iter()
                .zip(self.data.y())
                .map(|(m, d)| self.transform(*m) - self.transform(*d)),
        ))
    }

    fn jacobian(&self, p: &[f64], r0: &DVector<f64>) -> Result<DMatrix<f64>> {
        if let Some(jac) = &self.jacobian {
            let mut j = jac(p)?;
            if self.loss_space == LossSpace::Log10 {
                let y = self.predict(p)?;
                for (i, yi) in y.iter().enumerate() {
                    let s = if *yi > LOG_FLOOR {
                        1.0 / (yi * std::f64::consts::LN_10)
                    } else {
                        0.0
                    };
                    j.row_mut(i).scale_mut(s);
                }
            }
            return Ok(j);
        }
        let n = p.len();
        let column = |k: usize| -> Result<DVector<f64>> {
            let h = (1e-6 * p[k].abs()).max(1e-10);
            let mut hi = p.to_vec();
            let mut lo = p.to_vec();
            hi[k] += h;
            lo[k] -= h;
            self.clamp(&mut hi);
            self.clamp(&mut lo);
            let width = hi[k] - lo[k];
            if width == 0.0 {
                return Ok(DVector::zeros(r0.len()));
            }
            let rh = self.residuals(&hi)?;
            let rl = self.residuals(&lo)?;
            Ok((rh - rl) / width)
        };
        let cols: Vec<DVector<f64>> = if self.options.parallel {
            (0..n).into_par_iter().map(column).collect::<Result<_>>()?
        } else {
            (0..n).map(column).collect::<Result<_>>()?
        };
        Ok(DMatrix::from_columns(&cols))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    LevenbergMarquardt,
    NelderMeadFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Euclidean norm of the final residual vector.
    pub residual_norm: f64,
    /// Ratio of extreme singular values of the final Jacobian.
    pub jacobian_condition: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// One-sigma uncertainties from `s² (JᵀJ)⁻¹` with `s² = ‖r‖²/(m − n)`.
    pub param_uncertainties: Vec<f64>,
    /// ∞-norm of Jᵀr at the returned parameters.
    pub gradient_norm: f64,
    /// Residual norm after the initial point and after every accepted step.
    pub residual_history: Vec<f64>,
    pub method: FitMethod,
}

/// Minimizes `½‖r(p)‖²` for the problem's residuals.
///
/// Running out of iterations yields `converged = false` rather than an error;
/// a non-finite model output is a [`Error::ModelEvaluation`].
pub fn nlls_minimize(problem: &FitProblem) -> Result<FitResult> {
    problem.validate()?;
    let opts = problem.options;
    let n = problem.init.len();
    let mut p = problem.init.clone();
    problem.clamp(&mut p);

    let mut evals = 1usize;
    let mut r = problem.residuals(&p)?;
    let mut cost = 0.5 * r.norm_squared();
    let mut j = problem.jacobian(&p, &r)?;
    evals += 2 * n;
    let mut history = vec![r.norm()];
    let mut iterations = 0usize;
    let mut converged = false;
    let mut stalled = false;

    let mut jtj = j.tr_mul(&j);
    let mut g = j.tr_mul(&r);
    let max_diag = |m: &DMatrix<f64>| m.diagonal().iter().cloned().fold(0.0, f64::max);
    let mut lambda = 1e-3 * max_diag(&jtj);
    if lambda == 0.0 {
        lambda = 1e-3;
    }

    let mut trials = 0usize;
    while iterations < opts.max_iterations {
        if g.amax() <= opts.gtol || cost == 0.0 {
            converged = true;
            break;
        }
        if lambda > LAMBDA_CEILING * max_diag(&jtj).max(1.0) {
            stalled = true;
            break;
        }
        trials += 1;
        // hard stop so a model that never improves cannot spin forever
        if trials > 50 * opts.max_iterations {
            break;
        }
        let mut a = jtj.clone();
        for i in 0..n {
            a[(i, i)] += lambda;
        }
        let Some(chol) = a.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let delta = chol.solve(&(-&g));
        let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
        problem.clamp(&mut trial);
        evals += 1;
        let trial_r = match problem.residuals(&trial) {
            Ok(v) => v,
            Err(Error::ModelEvaluation(_)) => {
                lambda *= 10.0;
                continue;
            }
            Err(e) => return Err(e),
        };
        let trial_cost = 0.5 * trial_r.norm_squared();
        if trial_cost < cost {
            iterations += 1;
            let step = trial
                .iter()
                .zip(&p)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel_cost = (cost - trial_cost) / cost;
            p = trial;
            r = trial_r;
            cost = trial_cost;
            history.push(r.norm());
            j = problem.jacobian(&p, &r)?;
            evals += 2 * n;
            jtj = j.tr_mul(&j);
            g = j.tr_mul(&r);
            lambda = (lambda / 10.0).max(f64::MIN_POSITIVE);
            if step <= opts.xtol * (scale + opts.xtol) || rel_cost <= opts.ftol {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
        }
    }

    let mut method = FitMethod::LevenbergMarquardt;
    if stalled {
        method = FitMethod::NelderMeadFallback;
        let nm = nelder_mead(problem, &p, 5000 * n)?;
        evals += nm.evaluations;
        if nm.cost < cost {
            p = nm.params;
            r = problem.residuals(&p)?;
            cost = 0.5 * r.norm_squared();
            history.push(r.norm());
            j = problem.jacobian(&p, &r)?;
            evals += 2 * n + 1;
            g = j.tr_mul(&r);
        }
        converged = nm.converged;
        debug_assert!(cost >= 0.0);
    }

    let m = r.len();
    let svd = j.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let jacobian_condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let param_uncertainties = uncertainties(&j, r.norm_squared(), m, n);
    Ok(FitResult {
        params: p,
        residual_norm: r.norm(),
        jacobian_condition,
        iterations,
        evaluations: evals,
        converged,
        param_uncertainties,
        gradient_norm: g.amax(),
        residual_history: history,
        method,
    })
}

fn uncertainties(j: &DMatrix<f64>, rss: f64, m: usize, n: usize) -> Vec<f64> {
    if m <= n {
        return vec![f64::NAN; n];
    }
    let s2 = rss / (m - n) as f64;
    match j.tr_mul(j).pseudo_inverse(1e-300) {
        Ok(cov) => (0..n).map(|i| (s2 * cov[(i, i)]).max(0.0).sqrt()).collect(),
        Err(_) => vec![f64::NAN; n],
    }
}

struct SimplexResult {
    params: Vec<f64>,
    cost: f64,
    evaluations: usize,
    converged: bool,
}

/// Plain Nelder–Mead on `½‖r‖²` with reflection 1, expansion 2,
/// contraction ½ and shrink ½. Points are projected onto the bounds.
fn nelder_mead(problem: &FitProblem, start: &[f64], max_evals: usize) -> Result<SimplexResult> {
    let n = start.len();
    let evals = std::cell::Cell::new(0usize);
    let f = |x: &[f64]| -> Result<f64> {
        evals.set(evals.get() + 1);
        match problem.residuals(x) {
            Ok(r) => Ok(0.5 * r.norm_squared()),
            Err(Error::ModelEvaluation(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += if v[i] != 0.0 { 0.05 * v[i] } else { 2.5e-4 };
        problem.clamp(&mut v);
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|x| f(x)).collect::<Result<_>>()?;
    let mut converged = false;
    while evals.get() < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|a, b| fv[*a].total_cmp(&fv[*b]));
        simplex = order.iter().map(|i| simplex[*i].clone()).collect();
        fv = order.iter().map(|i| fv[*i]).collect();

        let spread = (fv[n] - fv[0]).abs();
        let size = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if size <= problem.options.xtol
            || spread <= problem.options.ftol * fv[0].abs().max(f64::MIN_POSITIVE)
        {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (w - c))
                .collect();
            problem.clamp(&mut x);
            x
        };
        let xr = along(-1.0);
        let fr = f(&xr)?;
        if fr < fv[0] {
            let xe = along(-2.0);
            let fe = f(&xe)?;
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
        } else if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
        } else {
            let (xc, fc) = if fr < fv[n] {
                let x = along(-0.5);
                let v = f(&x)?;
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x)?;
                (x, v)
            };
            if fc < fv[n].min(fr) {
                simplex[n] = xc;
                fv[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    let mut x: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&best)
                        .map(|(v, b)| b + 0.5 * (v - b))
                        .collect();
                    problem.clamp(&mut x);
                    fv[i] = f(&x)?;
                    simplex[i] = x;
                }
            }
        }
    }
    let best = (0..=n).min_by(|a, b| fv[*a].total_cmp(&fv[*b])).unwrap_or(0);
    Ok(SimplexResult {
        params: simplex[best].clone(),
        cost: fv[best],
        evaluations: evals.get(),
        converged,
    })
}
