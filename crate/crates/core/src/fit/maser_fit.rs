//! Fitting (g_e, κ_s, N) of the mean-field maser model to a photon trace.
//!
//! The optimizer works on `log10` of the three parameters. The burst makes
//! the objective strongly multimodal once several Rabi ripples are included,
//! so the fit is staged: it first matches the data up to shortly after the
//! main peak and then repeatedly extends the window, starting each stage from
//! the previous optimum.

use serde::{Deserialize, Serialize};

use super::lm::{nlls_minimize, FitProblem, FitResult, LmOptions, LossSpace};
use crate::error::{Error, Result};
use crate::maser::{cooperativity, simulate_maser, MaserState, MaserSystemParams};
use crate::ode::Tolerances;
use crate::units::{TimeTrace, Unit};

/// Parameters held fixed during a maser fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaserFixed {
    pub kappa_c: f64,
    pub gamma: f64,
    pub n_bar: f64,
    pub inversion0: f64,
    #[serde(default)]
    pub delta: f64,
}

impl MaserFixed {
    pub fn reference() -> Self {
        let p = MaserSystemParams::reference();
        Self {
            kappa_c: p.kappa_c,
            gamma: p.gamma,
            n_bar: p.n_bar,
            inversion0: 0.52,
            delta: 0.0,
        }
    }

    pub fn params(&self, g_e: f64, kappa_s: f64, n_spins: f64) -> MaserSystemParams {
        MaserSystemParams {
            g_e,
            kappa_c: self.kappa_c,
            kappa_s,
            gamma: self.gamma,
            delta: self.delta,
            n_spins,
            n_bar: self.n_bar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaserFitOptions {
    pub loss_space: LossSpace,
    pub tolerances: Tolerances,
    /// Stage window ends as multiples of the data's peak time; the final
    /// stage always uses the full trace.
    pub stages: Vec<f64>,
    /// Hold g_e fixed at its initial value.
    pub fix_coupling: bool,
}

impl Default for MaserFitOptions {
    fn default() -> Self {
        Self {
            loss_space: LossSpace::Log10,
            tolerances: Tolerances::default(),
            stages: vec![1.0, 1.2, 1.4, 1.7, 2.0, 2.5, 3.0, 4.0, 6.0],
            fix_coupling: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaserFitOutcome {
    pub g_e: f64,
    pub kappa_s: f64,
    pub n_spins: f64,
    pub cooperativity: f64,
    /// Result of the final stage; `params` are log10 values.
    pub result: FitResult,
    /// One-sigma uncertainties on (g_e, κ_s, N) propagated from log space.
    pub uncertainties: [f64; 3],
}

/// Photon numbers standing in for a trial whose integration failed.
const FAILED_TRIAL_PHOTONS: f64 = 1e-30;

fn predict(fixed: &MaserFixed, tol: Tolerances, t: &[f64], g: f64, ks: f64, n: f64) -> Result<Vec<f64>> {
    let params = fixed.params(g, ks, n);
    let init = MaserState::initial(fixed.n_bar, fixed.inversion0);
    let t_end = *t.last().unwrap_or(&0.0);
    match simulate_maser(&params, &init, (0.0, t_end), tol, Some(t)) {
        Ok(traj) => Ok(traj.photon_numbers()),
        Err(e) if e.is_numerical() => Ok(vec![FAILED_TRIAL_PHOTONS; t.len()]),
        Err(e) => Err(e),
    }
}

/// Time and height of the maximum, refined by a parabola through log values.
fn peak_of(t: &[f64], y: &[f64]) -> (f64, f64) {
    let (i, _) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap_or((0, &0.0));
    if i == 0 || i + 1 >= y.len() || y[i - 1] <= 0.0 || y[i + 1] <= 0.0 {
        return (t[i], y[i]);
    }
    let (a, b, c) = (y[i - 1].ln(), y[i].ln(), y[i + 1].ln());
    let den = a - 2.0 * b + c;
    if den >= 0.0 {
        return (t[i], y[i]);
    }
    let off = 0.5 * (a - c) / den;
    let h = 0.5 * (t[i + 1] - t[i - 1]);
    (t[i] + off * h, (b - 0.25 * (a - c) * off).exp())
}

/// Geometric bisection for `f(x) = 0` with `f` decreasing on `[lo, hi]`.
fn bisect_log(mut lo: f64, mut hi: f64, iters: usize, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    for _ in 0..iters {
        let mid = (lo * hi).sqrt();
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Moves the start so the model burst peaks at the same time (via g_e) and
/// height (via N) as the data. The LM basin around the optimum is only a few
/// percent wide in g_e, so a raw guess is rarely good enough.
fn align_to_peak(
    fixed: &MaserFixed,
    tol: Tolerances,
    data: &TimeTrace,
    (mut g, ks, mut n): (f64, f64, f64),
    fix_g: bool,
) -> Result<(f64, f64, f64)> {
    let t = data.t();
    let (tp, yp) = peak_of(t, data.y());
    let model_peak = |g: f64, n: f64| -> Result<(f64, f64)> {
        let y = predict(fixed, tol, t, g, ks, n)?;
        Ok(peak_of(t, &y))
    };
    for _ in 0..3 {
        if !fix_g {
            g = bisect_log(g / 4.0, g * 4.0, 30, |x| Ok(model_peak(x, n)?.0 - tp))?;
        }
        let (_, y_model) = model_peak(g, n)?;
        if !(y_model > 0.0 && y_model.is_finite()) {
            break;
        }
        n = (n * yp / y_model).max(1.0);
    }
    Ok((g, ks, n))
}

/// Fits g_e, κ_s and N (started from `init`) to a baseline-corrected photon
/// trace whose time axis starts at the excitation, t = 0.
pub fn fit_maser_parameters(
    photon_trace: &TimeTrace,
    fixed: &MaserFixed,
    init: (f64, f64, f64),
    options: &MaserFitOptions,
) -> Result<MaserFitOutcome> {
    photon_trace.expect_unit(Unit::Photons)?;
    if photon_trace.t()[0] < 0.0 {
        return Err(Error::InvalidInput("photon trace must start at t >= 0".into()));
    }
    if !(fixed.kappa_c > 0.0 && fixed.gamma >= 0.0 && fixed.n_bar >= 0.0) {
        return Err(Error::InvalidInput("fixed maser parameters out of range".into()));
    }
    let (g0, ks0, n0) = init;
    if !(g0 > 0.0 && ks0 > 0.0 && n0 >= 1.0) {
        return Err(Error::InvalidInput("initial g_e, κ_s must be > 0 and N >= 1".into()));
    }
    let t_peak = photon_trace
        .t()
        .iter()
        .zip(photon_trace.y())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(t, _)| *t)
        .unwrap_or(0.0);
    let t_last = *photon_trace.t().last().unwrap();

    let mut ends: Vec<f64> = options
        .stages
        .iter()
        .map(|m| m * t_peak)
        .filter(|e| *e > 0.0 && *e < t_last)
        .collect();
    ends.push(t_last);

    let tol = options.tolerances;
    let fix_g = options.fix_coupling;
    let (g0, ks0, n0) = align_to_peak(fixed, tol, photon_trace, (g0, ks0, n0), fix_g)?;
    let mut q = if fix_g {
        vec![ks0.log10(), n0.log10()]
    } else {
        vec![g0.log10(), ks0.log10(), n0.log10()]
    };
    let bounds: Vec<(f64, f64)> = if fix_g {
        vec![(0.0, 12.0), (0.0, 30.0)]
    } else {
        vec![(0.0, 12.0), (0.0, 12.0), (0.0, 30.0)]
    };
    let mut last: Option<FitResult> = None;
    for end in ends {
        let data = photon_trace.window(f64::NEG_INFINITY, end)?;
        let t = data.t().to_vec();
        let model = move |p: &[f64]| -> Result<Vec<f64>> {
            let (g, ks, n) = if fix_g {
                (g0, 10f64.powf(p[0]), 10f64.powf(p[1]))
            } else {
                (10f64.powf(p[0]), 10f64.powf(p[1]), 10f64.powf(p[2]))
            };
            predict(fixed, tol, &t, g, ks, n)
        };
        let problem = FitProblem::new(model, data, q.clone())
            .with_bounds(bounds.clone())
            .with_loss_space(options.loss_space)
            .with_options(LmOptions::default());
        let res = nlls_minimize(&problem)?;
        q = res.params.clone();
        last = Some(res);
    }
    let result = last.expect("at least one stage");
    let lin: Vec<f64> = result.params.iter().map(|v| 10f64.powf(*v)).collect();
    // σ_x = x ln10 σ_log10x
    let sig: Vec<f64> = lin
        .iter()
        .zip(&result.param_uncertainties)
        .map(|(x, s)| x * std::f64::consts::LN_10 * s)
        .collect();
    let (g_e, kappa_s, n_spins, uncertainties) = if fix_g {
        (g0, lin[0], lin[1], [0.0, sig[0], sig[1]])
    } else {
        (lin[0], lin[1], lin[2], [sig[0], sig[1], sig[2]])
    };
    Ok(MaserFitOutcome {
        g_e,
        kappa_s,
        n_spins,
        cooperativity: cooperativity(g_e, fixed.kappa_c, kappa_s)?,
        result,
        uncertainties,
    })
}
