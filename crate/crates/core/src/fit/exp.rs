//! Exponential-model drivers: the biexponential trEPR form and
//! sums of decaying exponentials with an optional offset.
//!
//! Rates are fitted in units of the inverse data span so that amplitude and
//! rate columns of the Jacobian have comparable magnitude.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{nlls_minimize, FitProblem, FitResult, LmOptions};
use crate::error::{Error, Result};
use crate::triplet::BiexpFit;
use crate::units::TimeTrace;

/// Rates closer to zero than this (in inverse-span units) sit on the bound.
const RATE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiexpOutcome {
    pub fit: BiexpFit,
    pub result: FitResult,
}

fn span_of(trace: &TimeTrace) -> (f64, f64) {
    let t = trace.t();
    let t0 = t[0];
    let span = t[t.len() - 1] - t0;
    (t0, span)
}

/// Fits `A e^{α₋ t} + B e^{α₊ t}` with both rates negative, starting from
/// `init`. Times are used as given (not shifted). Components are returned
/// ordered so that `α₋ <= α₊`.
pub fn fit_biexponential(trace: &TimeTrace, init: &BiexpFit) -> Result<BiexpOutcome> {
    fit_biexponential_with(trace, init, LmOptions::default())
}

pub fn fit_biexponential_with(trace: &TimeTrace, init: &BiexpFit, options: LmOptions) -> Result<BiexpOutcome> {
    if trace.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "biexponential fit needs at least 8 samples, got {}",
            trace.len()
        )));
    }
    if !(init.alpha_minus < 0.0 && init.alpha_plus < 0.0) {
        return Err(Error::InvalidInput("initial rates must be negative".into()));
    }
    let (_, span) = span_of(trace);
    let t: Vec<f64> = trace.t().iter().map(|v| v / span).collect();
    let tm = t.clone();
    let tj = t.clone();
    let m = t.len();
    let model = move |p: &[f64]| -> Result<Vec<f64>> {
        Ok(tm
            .iter()
            .map(|t| p[0] * (p[2] * t).exp() + p[1] * (p[3] * t).exp())
            .collect())
    };
    let jac = move |p: &[f64]| -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_fn(m, 4, |i, k| {
            let t = tj[i];
            match k {
                0 => (p[2] * t).exp(),
                1 => (p[3] * t).exp(),
                2 => p[0] * t * (p[2] * t).exp(),
                _ => p[1] * t * (p[3] * t).exp(),
            }
        }))
    };
    let init_p = vec![
        init.a,
        init.b,
        init.alpha_minus * span,
        init.alpha_plus * span,
    ];
    let bounds = vec![
        (f64::NEG_INFINITY, f64::INFINITY),
        (f64::NEG_INFINITY, f64::INFINITY),
        (f64::NEG_INFINITY, -RATE_FLOOR),
        (f64::NEG_INFINITY, -RATE_FLOOR),
    ];
    let problem = FitProblem::new(model, trace.clone(), init_p)
        .with_bounds(bounds)
        .with_jacobian(jac)
        .with_options(options);
    let mut result = nlls_minimize(&problem)?;
    let p = result.params.clone();
    let u = result.param_uncertainties.clone();
    let mut fit = BiexpFit {
        a: p[0],
        b: p[1],
        alpha_minus: p[2] / span,
        alpha_plus: p[3] / span,
        uncertainties: Some([u[0], u[1], u[2] / span, u[3] / span]),
    };
    if fit.alpha_minus > fit.alpha_plus {
        fit = BiexpFit {
            a: fit.b,
            b: fit.a,
            alpha_minus: fit.alpha_plus,
            alpha_plus: fit.alpha_minus,
            uncertainties: fit.uncertainties.map(|u| [u[1], u[0], u[3], u[2]]),
        };
        result.params = vec![fit.a, fit.b, fit.alpha_minus * span, fit.alpha_plus * span];
        result.param_uncertainties.swap(0, 1);
        result.param_uncertainties.swap(2, 3);
    }
    if p[2] >= -RATE_FLOOR * 1.000001 || p[3] >= -RATE_FLOOR * 1.000001 {
        // a rate pinned at zero: the data do not decay
        result.converged = false;
    }
    Ok(BiexpOutcome { fit, result })
}

/// `Σ aᵢ e^{−(t − t₀)/τᵢ} (+ c)` fitted to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpSumFit {
    /// Raw amplitudes at the first sample time, ordered by increasing lifetime.
    pub amplitudes: Vec<f64>,
    /// Lifetimes in seconds, increasing.
    pub lifetimes: Vec<f64>,
    pub lifetime_uncertainties: Vec<f64>,
    pub offset: Option<f64>,
    /// Time origin `t₀` of the model (the first sample).
    pub t0: f64,
    pub result: FitResult,
}

impl ExpSumFit {
    pub fn eval(&self, t: f64) -> f64 {
        let s: f64 = self
            .amplitudes
            .iter()
            .zip(&self.lifetimes)
            .map(|(a, tau)| a * (-(t - self.t0) / tau).exp())
            .sum();
        s + self.offset.unwrap_or(0.0)
    }

    /// Amplitudes scaled to sum to one.
    pub fn normalized_amplitudes(&self) -> Vec<f64> {
        let total: f64 = self.amplitudes.iter().sum();
        self.amplitudes.iter().map(|a| a / total).collect()
    }
}

/// Starting rate (inverse-span units) from a log-linear regression of the
/// samples above 5% of the peak deviation from the offset.
fn rough_rate(t: &[f64], y: &[f64], offset: f64) -> f64 {
    let dev: Vec<f64> = y.iter().map(|v| (v - offset).abs()).collect();
    let peak = dev.iter().cloned().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(&dev)
        .filter(|(_, d)| **d > 0.05 * peak)
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    if pts.len() < 2 {
        return 3.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let k = -sxy / sxx;
    if k.is_finite() && k > 0.05 {
        k.min(1e3)
    } else {
        3.0
    }
}

/// Fits `n` decaying exponentials (plus a constant when `with_offset`).
///
/// The model is anchored at the first sample. Components whose lifetimes
/// coincide within 1%, or whose normalized weight falls below 1e-3, are
/// reported but mark the fit as not converged: the data do not support
/// that many components.
pub fn fit_exponentials(trace: &TimeTrace, n: usize, with_offset: bool) -> Result<ExpSumFit> {
    if n == 0 || n > 3 {
        return Err(Error::InvalidInput(format!("{n} components requested, expected 1 to 3")));
    }
    let n_par = 2 * n + usize::from(with_offset);
    if trace.len() < n_par + 2 {
        return Err(Error::InvalidInput("too few samples for the requested model".into()));
    }
    let (t0, span) = span_of(trace);
    let t: Vec<f64> = trace.t().iter().map(|v| (v - t0) / span).collect();
    let y = trace.y();
    let tail = y.len().saturating_sub((y.len() / 10).max(1));
    let offset0 = if with_offset {
        y[tail..].iter().sum::<f64>() / (y.len() - tail) as f64
    } else {
        0.0
    };
    let k0 = rough_rate(&t, y, offset0);
    let a0 = y[0] - offset0;
    let (weights, factors): (&[f64], &[f64]) = match n {
        1 => (&[1.0], &[1.0]),
        2 => (&[0.7, 0.3], &[3.0, 0.4]),
        _ => (&[0.5, 0.3, 0.2], &[5.0, 1.0, 0.2]),
    };
    let mut init = Vec::with_capacity(n_par);
    for i in 0..n {
        init.push(a0 * weights[i]);
        init.push(k0 * factors[i]);
    }
    if with_offset {
        init.push(offset0);
    }
    let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); n_par];
    for i in 0..n {
        bounds[2 * i + 1] = (RATE_FLOOR, f64::INFINITY);
    }

    let tm = t.clone();
    let model = move |p: &[f64]| -> Result<Vec<f64>> {
        Ok(tm
            .iter()
            .map(|t| {
                let s: f64 = (0..n).map(|i| p[2 * i] * (-p[2 * i + 1] * t).exp()).sum();
                if with_offset { s + p[2 * n] } else { s }
            })
            .collect())
    };
    let tj = t.clone();
    let m = t.len();
    let jac = move |p: &[f64]| -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_fn(m, n_par, |row, k| {
            let t = tj[row];
            if k == 2 * n {
                return 1.0;
            }
            let i = k / 2;
            let e = (-p[2 * i + 1] * t).exp();
            if k % 2 == 0 { e } else { -p[2 * i] * t * e }
        }))
    };
    let problem = FitProblem::new(model, trace.clone(), init)
        .with_bounds(bounds)
        .with_jacobian(jac);
    let mut result = nlls_minimize(&problem)?;

    let p = result.params.clone();
    let u = result.param_uncertainties.clone();
    let mut comps: Vec<(f64, f64, f64)> = (0..n)
        .map(|i| {
            let k = p[2 * i + 1];
            let tau = span / k;
            // σ_τ = τ σ_k / k
            (p[2 * i], tau, tau * u[2 * i + 1] / k)
        })
        .collect();
    comps.sort_by(|a, b| a.1.total_cmp(&b.1));
    let total: f64 = comps.iter().map(|c| c.0).sum();
    let merged = comps.windows(2).any(|w| (w[1].1 - w[0].1).abs() <= 1e-2 * w[0].1);
    let negligible = n > 1 && comps.iter().any(|c| (c.0 / total).abs() < 1e-3);
    let pinned = comps.iter().any(|c| c.1 >= span / (RATE_FLOOR * 1.000001));
    if merged || negligible || pinned {
        result.converged = false;
    }
    Ok(ExpSumFit {
        amplitudes: comps.iter().map(|c| c.0).collect(),
        lifetimes: comps.iter().map(|c| c.1).collect(),
        lifetime_uncertainties: comps.iter().map(|c| c.2).collect(),
        offset: with_offset.then(|| p[2 * n]),
        t0,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{linspace, Unit};
    use approx::assert_relative_eq;

    fn paper_fit() -> BiexpFit {
        BiexpFit::new(0.547, -0.066, -3.93e5, -0.459e5)
    }

    #[test]
    fn biexp_noiseless_round_trip() {
        let t = linspace(0.0, 40e-6, 400);
        let truth = paper_fit();
        let tr = crate::triplet::predicted_trepr_signal(&truth, &t).unwrap();
        let init = BiexpFit::new(0.4, -0.1, -2.5e5, -0.8e5);
        let out = fit_biexponential(&tr, &init).unwrap();
        assert!(out.result.converged);
        assert_relative_eq!(out.fit.a, truth.a, max_relative = 1e-6);
        assert_relative_eq!(out.fit.b, truth.b, max_relative = 1e-6);
        assert_relative_eq!(out.fit.alpha_minus, truth.alpha_minus, max_relative = 1e-6);
        assert_relative_eq!(out.fit.alpha_plus, truth.alpha_plus, max_relative = 1e-6);
    }

    #[test]
    fn biexp_swapped_start_relabels() {
        let t = linspace(0.0, 40e-6, 400);
        let truth = paper_fit();
        let tr = crate::triplet::predicted_trepr_signal(&truth, &t).unwrap();
        let straight = fit_biexponential(&tr, &BiexpFit::new(0.5, -0.05, -3.5e5, -0.5e5)).unwrap();
        let swapped = fit_biexponential(&tr, &BiexpFit::new(-0.05, 0.5, -0.5e5, -3.5e5)).unwrap();
        assert_relative_eq!(
            straight.result.residual_norm,
            swapped.result.residual_norm,
            epsilon = 1e-9
        );
        assert_relative_eq!(swapped.fit.alpha_minus, truth.alpha_minus, max_relative = 1e-6);
        assert_relative_eq!(swapped.fit.a, truth.a, max_relative = 1e-6);
    }

    #[test]
    fn biexp_nested_single_exponential() {
        let t = linspace(0.0, 40e-6, 400);
        let tr = TimeTrace::from_fn(&t, Unit::Dimensionless, |t| 0.4 * (-1e5 * t).exp()).unwrap();
        let out = fit_biexponential(&tr, &BiexpFit::new(0.3, 0.05, -3e5, -0.8e5)).unwrap();
        let (big, small) = if out.fit.a.abs() > out.fit.b.abs() {
            (out.fit.a, out.fit.b)
        } else {
            (out.fit.b, out.fit.a)
        };
        assert!(small.abs() < 1e-3 * big.abs(), "A = {}, B = {}", out.fit.a, out.fit.b);
    }

    #[test]
    fn biexp_constant_data_does_not_converge() {
        let t = linspace(0.0, 40e-6, 100);
        let tr = TimeTrace::new(t, vec![0.3; 100], Unit::Dimensionless).unwrap();
        let out = fit_biexponential(&tr, &paper_fit()).unwrap();
        assert!(!out.result.converged);
    }

    #[test]
    fn biexp_needs_samples() {
        let t = linspace(0.0, 1e-6, 5);
        let tr = TimeTrace::new(t, vec![1.0; 5], Unit::Dimensionless).unwrap();
        assert!(fit_biexponential(&tr, &paper_fit()).is_err());
    }

    #[test]
    fn biexp_scale_equivariance() {
        let t = linspace(0.0, 40e-6, 300);
        let truth = paper_fit();
        let base = crate::triplet::predicted_trepr_signal(&truth, &t).unwrap();
        // perturb so the optimum is not an exact interpolant
        let y: Vec<f64> = base
            .y()
            .iter()
            .enumerate()
            .map(|(i, v)| v + 2e-3 * ((i * 7919 % 101) as f64 / 101.0 - 0.5))
            .collect();
        let noisy = base.with_values(y.clone(), Unit::Dimensionless).unwrap();
        let c = 37.5;
        let scaled = base
            .with_values(y.iter().map(|v| v * c).collect(), Unit::Dimensionless)
            .unwrap();
        let init = BiexpFit::new(0.5, -0.05, -3.5e5, -0.5e5);
        let init_c = BiexpFit::new(0.5 * c, -0.05 * c, -3.5e5, -0.5e5);
        let a = fit_biexponential(&noisy, &init).unwrap().fit;
        let b = fit_biexponential(&scaled, &init_c).unwrap().fit;
        assert_relative_eq!(b.a, c * a.a, max_relative = 1e-8);
        assert_relative_eq!(b.b, c * a.b, max_relative = 1e-8);
        assert_relative_eq!(b.alpha_minus, a.alpha_minus, max_relative = 1e-8);
        assert_relative_eq!(b.alpha_plus, a.alpha_plus, max_relative = 1e-8);
    }

    #[test]
    fn mono_exponential_with_offset() {
        let t = linspace(0.0, 3e-9, 200);
        let tr = TimeTrace::from_fn(&t, Unit::Dimensionless, |t| -0.02 * (-t / 650e-12).exp() + 0.005)
            .unwrap();
        let fit = fit_exponentials(&tr, 1, true).unwrap();
        assert!(fit.result.converged);
        assert_relative_eq!(fit.lifetimes[0], 650e-12, max_relative = 1e-8);
        assert_relative_eq!(fit.amplitudes[0], -0.02, max_relative = 1e-8);
        assert_relative_eq!(fit.offset.unwrap(), 0.005, max_relative = 1e-8);
        assert_relative_eq!(fit.eval(1e-9), tr.y()[0] * 0.0 + (-0.02 * (-1e-9f64 / 650e-12).exp() + 0.005), max_relative = 1e-8);
    }

    #[test]
    fn rejects_bad_component_count() {
        let t = linspace(0.0, 1.0, 20);
        let tr = TimeTrace::from_fn(&t, Unit::Dimensionless, |t| (-t).exp()).unwrap();
        assert!(fit_exponentials(&tr, 0, false).is_err());
        assert!(fit_exponentials(&tr, 4, false).is_err());
    }
}
