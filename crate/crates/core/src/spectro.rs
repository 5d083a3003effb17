//! Transient-absorption global analysis, TCSPC tail fits and triplet
//! quantum-yield arithmetic.
//!
//! Delays of a [`SpectrumMatrix`] are in picoseconds, wavelengths in nm.
//! TCSPC traces use the ordinary [`TimeTrace`] convention (seconds).

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::exp::fit_exponentials;
use crate::fit::lm::{nlls_minimize, FitProblem};
use crate::units::{fmt_full, TimeTrace, Unit};

/// Singular values at or above this fraction of the largest are significant.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.10;

/// ΔA(λ, t): one row per wavelength, one column per delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMatrix {
    wavelengths: Vec<f64>,
    delays: Vec<f64>,
    delta_a: Vec<Vec<f64>>,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

impl SpectrumMatrix {
    /// `delta_a[i][j]` is the signal at `wavelengths[i]` and `delays[j]`.
    pub fn new(wavelengths: Vec<f64>, delays: Vec<f64>, delta_a: Vec<Vec<f64>>) -> Result<Self> {
        if delta_a.len() != wavelengths.len() || delta_a.iter().any(|r| r.len() != delays.len()) {
            return Err(Error::InvalidInput(format!(
                "ΔA must be {} x {} (wavelengths x delays)",
                wavelengths.len(),
                delays.len()
            )));
        }
        if !strictly_increasing(&wavelengths) || !strictly_increasing(&delays) {
            return Err(Error::InvalidInput("axes must be strictly increasing".into()));
        }
        let all = wavelengths.iter().chain(&delays).chain(delta_a.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("spectrum matrix contains non-finite values".into()));
        }
        Ok(Self {
            wavelengths,
            delays,
            delta_a,
        })
    }

    pub fn from_matrix(wavelengths: Vec<f64>, delays: Vec<f64>, m: &DMatrix<f64>) -> Result<Self> {
        let rows = (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect();
        Self::new(wavelengths, delays, rows)
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.delta_a
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.wavelengths.len(), self.delays.len(), |i, j| self.delta_a[i][j])
    }

    /// Reads the instrument layout: the first row holds the wavelengths
    /// (after an ignored corner cell), every further row is one delay
    /// followed by ΔA at each wavelength.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let head = records
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))??;
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad {what} value {s:?}")))
        };
        let wavelengths: Vec<f64> = head
            .iter()
            .skip(1)
            .map(|s| parse(s, "wavelength"))
            .collect::<Result<_>>()?;
        let mut delays = Vec::new();
        let mut by_delay: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in records.enumerate() {
            let rec = rec?;
            if rec.len() != wavelengths.len() + 1 {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    rec.len(),
                    wavelengths.len() + 1
                )));
            }
            delays.push(parse(&rec[0], "delay")?);
            by_delay.push(rec.iter().skip(1).map(|s| parse(s, "ΔA")).collect::<Result<_>>()?);
        }
        let rows = (0..wavelengths.len())
            .map(|i| by_delay.iter().map(|r| r[i]).collect())
            .collect();
        Self::new(wavelengths, delays, rows)
    }

    /// Writes the layout accepted by [`SpectrumMatrix::read_csv`].
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut head = vec!["delay_ps\\wavelength_nm".to_string()];
        head.extend(self.wavelengths.iter().map(|v| fmt_full(*v)));
        w.write_record(&head)?;
        for (j, d) in self.delays.iter().enumerate() {
            let mut rec = vec![fmt_full(*d)];
            rec.extend(self.delta_a.iter().map(|r| fmt_full(r[j])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalAnalysisResult {
    pub singular_values: Vec<f64>,
    /// Unit left singular vectors (λ profiles), one per singular value.
    pub spectral_components: Vec<Vec<f64>>,
    /// Right singular vectors scaled by their singular value.
    pub time_profiles: Vec<Vec<f64>>,
    pub significant_count: usize,
    /// Lifetimes (ps, increasing) shared by all significant time profiles.
    pub component_lifetimes: Vec<f64>,
    pub component_lifetime_uncertainties: Vec<f64>,
    /// Mono-exponential lifetime (ps) of each significant profile on its own;
    /// `None` where that fit failed.
    pub profile_lifetimes: Vec<Option<f64>>,
    pub converged: bool,
}

impl GlobalAnalysisResult {
    fn empty(n: usize) -> Self {
        Self {
            singular_values: vec![0.0; n],
            spectral_components: Vec::new(),
            time_profiles: Vec::new(),
            significant_count: 0,
            component_lifetimes: Vec::new(),
            component_lifetime_uncertainties: Vec::new(),
            profile_lifetimes: Vec::new(),
            converged: true,
        }
    }

    /// Rank-`k` reconstruction `Σ_{i<k} u_i (σ_i v_i)ᵀ`.
    pub fn reconstruct(&self, k: usize) -> DMatrix<f64> {
        let rows = self.spectral_components.first().map_or(0, Vec::len);
        let cols = self.time_profiles.first().map_or(0, Vec::len);
        let mut m = DMatrix::zeros(rows, cols);
        for (u, v) in self.spectral_components.iter().zip(&self.time_profiles).take(k) {
            m += DVector::from_column_slice(u) * DVector::from_column_slice(v).transpose();
        }
        m
    }
}

/// Full SVD of ΔA followed by lifetime fits of the significant time
/// profiles.
///
/// Profiles are not mean-centred. Each is fitted alone with `c e^{−t/τ} + d`;
/// in addition all significant profiles are fitted jointly with as many
/// shared exponentials as there are significant components, which is what
/// separates overlapping decays whose singular vectors are mixtures of both.
pub fn svd_global_analysis(m: &SpectrumMatrix, significance_threshold: f64) -> Result<GlobalAnalysisResult> {
    let (rows, cols) = (m.wavelengths.len(), m.delays.len());
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidInput(format!("matrix is {rows} x {cols}, need at least 2 x 2")));
    }
    if !(significance_threshold > 0.0 && significance_threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "significance threshold {significance_threshold} outside (0, 1]"
        )));
    }
    let a = m.matrix();
    let rank = rows.min(cols);
    if a.iter().all(|v| *v == 0.0) {
        return Ok(GlobalAnalysisResult::empty(rank));
    }
    let svd = a.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut order: Vec<usize> = (0..rank).collect();
    order.sort_by(|i, j| svd.singular_values[*j].total_cmp(&svd.singular_values[*i]));

    let mut singular_values = Vec::with_capacity(rank);
    let mut spectral_components = Vec::with_capacity(rank);
    let mut time_profiles = Vec::with_capacity(rank);
    for &k in &order {
        let s = svd.singular_values[k];
        let mut uk: Vec<f64> = u.column(k).iter().cloned().collect();
        let mut vk: Vec<f64> = vt.row(k).iter().map(|v| v * s).collect();
        // fix the sign: the largest spectral entry is positive
        let big = uk.iter().cloned().fold(0.0, |acc: f64, v| if v.abs() > acc.abs() { v } else { acc });
        if big < 0.0 {
            uk.iter_mut().for_each(|v| *v = -*v);
            vk.iter_mut().for_each(|v| *v = -*v);
        }
        singular_values.push(s);
        spectral_components.push(uk);
        time_profiles.push(vk);
    }
    let s_max = singular_values[0];
    let significant_count = singular_values
        .iter()
        .filter(|s| **s >= significance_threshold * s_max)
        .count();

    let t_s: Vec<f64> = m.delays.iter().map(|d| d * 1e-12).collect();
    let profile_lifetimes: Vec<Option<f64>> = time_profiles[..significant_count]
        .par_iter()
        .map(|p| {
            let tr = TimeTrace::new(t_s.clone(), p.clone(), Unit::Dimensionless).ok()?;
            let fit = fit_exponentials(&tr, 1, true).ok()?;
            fit.result.converged.then(|| fit.lifetimes[0] * 1e12)
        })
        .collect();

    let tau0 = profile_lifetimes
        .first()
        .copied()
        .flatten()
        .unwrap_or((m.delays[cols - 1] - m.delays[0]) / 3.0);
    let shared = fit_shared_lifetimes(&m.delays, &time_profiles[..significant_count], tau0)?;
    Ok(GlobalAnalysisResult {
        singular_values,
        spectral_components,
        time_profiles,
        significant_count,
        component_lifetimes: shared.lifetimes,
        component_lifetime_uncertainties: shared.uncertainties,
        profile_lifetimes,
        converged: shared.converged,
    })
}

struct SharedFit {
    lifetimes: Vec<f64>,
    uncertainties: Vec<f64>,
    converged: bool,
}

/// Fits every profile with `Σ_k a_jk e^{−t/τ_k} + c_j`, the τ_k shared.
fn fit_shared_lifetimes(t: &[f64], profiles: &[Vec<f64>], tau0: f64) -> Result<SharedFit> {
    let k = profiles.len();
    if k == 0 {
        return Ok(SharedFit {
            lifetimes: Vec::new(),
            uncertainties: Vec::new(),
            converged: true,
        });
    }
    let n = t.len();
    if n < 2 * k + 2 {
        return Err(Error::InvalidInput("too few delays for the significant components".into()));
    }
    let t0 = t[0];
    let span = t[n - 1] - t0;
    let u: Vec<f64> = t.iter().map(|v| (v - t0) / span).collect();
    let per = k + 1;
    let n_par = k * per + k;

    let factors: &[f64] = match k {
        1 => &[1.0],
        2 => &[1.6, 0.6],
        3 => &[3.0, 1.0, 0.3],
        _ => &[],
    };
    let r0 = span / tau0.abs().max(1e-3 * span);
    let rates: Vec<f64> = (0..k)
        .map(|i| match factors.get(i) {
            Some(f) => r0 * f,
            None => r0 * 4f64.powf(1.0 - i as f64),
        })
        .collect();

    // linear amplitudes for the starting rates
    let basis = DMatrix::from_fn(n, per, |row, c| if c < k { (-rates[c] * u[row]).exp() } else { 1.0 });
    let basis_svd = basis.svd(true, true);
    let mut init = Vec::with_capacity(n_par);
    for p in profiles {
        let coef = basis_svd
            .solve(&DVector::from_column_slice(p), 1e-12)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        init.extend(coef.iter());
    }
    init.extend(&rates);

    let stacked: Vec<f64> = profiles.iter().flatten().cloned().collect();
    let index: Vec<f64> = (0..stacked.len()).map(|i| i as f64).collect();
    let data = TimeTrace::new(index, stacked, Unit::Dimensionless)?;
    let um = u.clone();
    let model = move |p: &[f64]| -> Result<Vec<f64>> {
        let r = &p[k * per..];
        let mut out = Vec::with_capacity(k * n);
        for j in 0..k {
            let a = &p[j * per..(j + 1) * per];
            out.extend(um.iter().map(|x| {
                a[k] + (0..k).map(|i| a[i] * (-r[i] * x).exp()).sum::<f64>()
            }));
        }
        Ok(out)
    };
    let uj = u.clone();
    let jac = move |p: &[f64]| -> Result<DMatrix<f64>> {
        let r = &p[k * per..];
        let mut m = DMatrix::zeros(k * n, n_par);
        for j in 0..k {
            let a = &p[j * per..(j + 1) * per];
            for (row, x) in uj.iter().enumerate() {
                let rr = j * n + row;
                for i in 0..k {
                    let e = (-r[i] * x).exp();
                    m[(rr, j * per + i)] = e;
                    m[(rr, k * per + i)] = -a[i] * x * e;
                }
                m[(rr, j * per + k)] = 1.0;
            }
        }
        Ok(m)
    };
    let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); n_par];
    for b in &mut bounds[k * per..] {
        *b = (1e-9, f64::INFINITY);
    }
    let problem = FitProblem::new(model, data, init).with_bounds(bounds).with_jacobian(jac);
    let res = nlls_minimize(&problem)?;
    let mut comps: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let r = res.params[k * per + i];
            let tau = span / r;
            (tau, tau * res.param_uncertainties[k * per + i] / r)
        })
        .collect();
    comps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let merged = comps.windows(2).any(|w| (w[1].0 - w[0].0).abs() <= 1e-2 * w[0].0);
    Ok(SharedFit {
        lifetimes: comps.iter().map(|c| c.0).collect(),
        uncertainties: comps.iter().map(|c| c.1).collect(),
        converged: res.converged && !merged,
    })
}

/// Scalar decay rates of the chromophore, all in ns⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotophysicsRates {
    pub kappa_f: f64,
    pub kappa_isc: f64,
    pub kappa_ic_plus_rad: f64,
    pub theta_t: f64,
}

/// Rates and triplet yield from the fluorescence and ISC lifetimes (ns).
pub fn rates_from_lifetimes(tau_f: f64, tau_isc: f64) -> Result<PhotophysicsRates> {
    if !(tau_f > 0.0 && tau_isc > 0.0 && tau_f.is_finite() && tau_isc.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lifetimes must be positive, got τ_f = {tau_f}, τ_ISC = {tau_isc}"
        )));
    }
    if tau_isc < tau_f {
        return Err(Error::Inconsistent(format!(
            "τ_ISC = {tau_isc} ns is shorter than τ_f = {tau_f} ns, which would give θ_T > 1"
        )));
    }
    let kappa_f = 1.0 / tau_f;
    let kappa_isc = 1.0 / tau_isc;
    Ok(PhotophysicsRates {
        kappa_f,
        kappa_isc,
        kappa_ic_plus_rad: kappa_f - kappa_isc,
        theta_t: kappa_isc / kappa_f,
    })
}

/// Samples required after the count maximum.
pub const MIN_TAIL_SAMPLES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcspcFit {
    /// Seconds, increasing.
    pub lifetimes: Vec<f64>,
    pub lifetime_uncertainties: Vec<f64>,
    /// Sum to one; a component merged into a neighbour gets zero.
    pub amplitudes: Vec<f64>,
    /// Time of the count maximum where the tail starts.
    pub peak_time: f64,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Fits `n_components` exponentials to the decay after the count maximum.
///
/// When the data support fewer components the fit is flagged as not
/// converged; components whose lifetimes coincide are merged so that the
/// surplus one carries zero amplitude.
pub fn fit_tcspc(trace: &TimeTrace, n_components: usize) -> Result<TcspcFit> {
    if !(1..=3).contains(&n_components) {
        return Err(Error::InvalidInput(format!(
            "{n_components} components requested, expected 1 to 3"
        )));
    }
    let (peak_idx, _) = trace
        .y()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::InvalidInput("empty trace".into()))?;
    let tail_len = trace.len() - peak_idx - 1;
    if tail_len < MIN_TAIL_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "only {tail_len} samples after the peak, need {MIN_TAIL_SAMPLES}"
        )));
    }
    let peak_time = trace.t()[peak_idx];
    let tail = TimeTrace::new(
        trace.t()[peak_idx..].to_vec(),
        trace.y()[peak_idx..].to_vec(),
        trace.unit(),
    )?;
    let fit = fit_exponentials(&tail, n_components, false)?;
    let mut amps = fit.amplitudes.clone();
    for i in 1..amps.len() {
        let (a, b) = (fit.lifetimes[i - 1], fit.lifetimes[i]);
        if (b - a).abs() <= 1e-2 * a {
            amps[i] += amps[i - 1];
            amps[i - 1] = 0.0;
        }
    }
    let total: f64 = amps.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::ModelEvaluation(fit.result.params.clone()));
    }
    Ok(TcspcFit {
        lifetimes: fit.lifetimes.clone(),
        lifetime_uncertainties: fit.lifetime_uncertainties.clone(),
        amplitudes: amps.iter().map(|a| a / total).collect(),
        peak_time,
        residual_norm: fit.result.residual_norm,
        converged: fit.result.converged,
    })
}
