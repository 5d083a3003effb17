//! Microwave cavity characterization: port coupling from Q-circle diameters,
//! loaded and unloaded Q, decay rate, thermal occupancy, and conversion of
//! detected output power to intracavity photon number.

use std::f64::consts::TAU;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{TimeTrace, Unit, BOLTZMANN, PLANCK};

/// Diameters read off the reflection polar plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QCircleGeometry {
    /// Q-circle diameter, `0 <= d <= 2`.
    pub d: f64,
    /// Auxiliary-circle diameter for a lossy coupling loop, `1 < d2 <= 2`.
    pub d2: Option<f64>,
}

impl QCircleGeometry {
    pub fn lossless(d: f64) -> Self {
        Self { d, d2: None }
    }

    pub fn lossy(d: f64, d2: f64) -> Self {
        Self { d, d2: Some(d2) }
    }
}

/// Coupling coefficient `K = d/(d2 − 1)` (lossy) or `K = d/(2 − d)` (lossless).
pub fn coupling_from_qcircle(geom: &QCircleGeometry) -> Result<f64> {
    let d = geom.d;
    if !(d.is_finite() && (0.0..=2.0).contains(&d)) {
        return Err(Error::InvalidGeometry(format!("diameter {d} outside [0, 2]")));
    }
    match geom.d2 {
        Some(d2) => {
            if !(d2.is_finite() && d2 > 1.0 && d2 <= 2.0) {
                return Err(Error::InvalidGeometry(format!(
                    "auxiliary diameter {d2} outside (1, 2]"
                )));
            }
            if d > d2 {
                return Err(Error::InvalidGeometry(format!(
                    "Q-circle diameter {d} exceeds auxiliary diameter {d2}"
                )));
            }
            Ok(d / (d2 - 1.0))
        }
        None => {
            if d >= 2.0 {
                return Err(Error::InvalidGeometry(
                    "lossless diameter of 2 means infinite coupling".into(),
                ));
            }
            Ok(d / (2.0 - d))
        }
    }
}

/// `Q_L = f0 / (f_high − f_low)`.
pub fn loaded_q(f0: f64, f_low: f64, f_high: f64) -> Result<f64> {
    if !(f_low < f0 && f0 < f_high) {
        return Err(Error::InvalidInput(format!(
            "need f_low < f0 < f_high, got {f_low}, {f0}, {f_high}"
        )));
    }
    let bw = f_high - f_low;
    if !(bw > 0.0 && bw.is_finite()) {
        return Err(Error::InvalidInput("zero bandwidth".into()));
    }
    Ok(f0 / bw)
}

/// `Q_u = Q_L (1 + K1 + K2)`.
pub fn unloaded_q(q_loaded: f64, k1: f64, k2: f64) -> Result<f64> {
    if !(q_loaded > 0.0) || !(k1 >= 0.0) || !(k2 >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "need Q_L > 0 and K >= 0, got Q_L={q_loaded}, K1={k1}, K2={k2}"
        )));
    }
    Ok(q_loaded * (1.0 + k1 + k2))
}

/// Cavity energy decay rate `κ_c = 2π f / Q_L` in s⁻¹.
pub fn cavity_decay_rate(f_mode: f64, q_loaded: f64) -> Result<f64> {
    if !(f_mode > 0.0 && q_loaded > 0.0) {
        return Err(Error::InvalidInput("f_mode and Q_L must be positive".into()));
    }
    Ok(TAU * f_mode / q_loaded)
}

/// Bose–Einstein occupancy `1/(e^{hf/k_B T} − 1)`.
pub fn thermal_photons(f: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!("temperature {temperature} K must be > 0")));
    }
    if !(f > 0.0) {
        return Err(Error::InvalidInput(format!("frequency {f} Hz must be > 0")));
    }
    let x = PLANCK * f / (BOLTZMANN * temperature);
    Ok(x.exp_m1().recip())
}

/// Photon number from detected output power:
/// `⟨a†a⟩ = P (1 + K) / (h f κ_c K)`.
pub fn power_to_photons(p_watts: f64, coupling: f64, kappa_c: f64, f: f64) -> Result<f64> {
    if !(coupling > 0.0) {
        return Err(Error::InvalidInput(
            "coupling K must be > 0 for an output-coupled cavity".into(),
        ));
    }
    if !(kappa_c > 0.0 && f > 0.0) {
        return Err(Error::InvalidInput("kappa_c and f must be > 0".into()));
    }
    if !(p_watts >= 0.0) {
        return Err(Error::InvalidInput(format!("power {p_watts} W must be >= 0")));
    }
    Ok(p_watts * (1.0 + coupling) / (PLANCK * f * kappa_c * coupling))
}

/// Pointwise [`power_to_photons`] over a watts trace.
pub fn power_trace_to_photons(trace: &TimeTrace, coupling: f64, kappa_c: f64, f: f64) -> Result<TimeTrace> {
    trace.expect_unit(Unit::Watts)?;
    let y = trace
        .y()
        .iter()
        .map(|&p| power_to_photons(p, coupling, kappa_c, f))
        .collect::<Result<_>>()?;
    trace.with_values(y, Unit::Photons)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityCharacterization {
    pub f_mode: f64,
    pub q_loaded: f64,
    pub k1: f64,
    pub k2: f64,
    pub kappa_c: f64,
    pub temperature: f64,
    pub n_bar: f64,
}

impl CavityCharacterization {
    pub fn new(f_mode: f64, q_loaded: f64, k1: f64, k2: f64, temperature: f64) -> Result<Self> {
        if !(k1 >= 0.0 && k2 >= 0.0) {
            return Err(Error::InvalidInput("coupling coefficients must be >= 0".into()));
        }
        Ok(Self {
            f_mode,
            q_loaded,
            k1,
            k2,
            kappa_c: cavity_decay_rate(f_mode, q_loaded)?,
            temperature,
            n_bar: thermal_photons(f_mode, temperature)?,
        })
    }

    pub fn q_unloaded(&self) -> f64 {
        self.q_loaded * (1.0 + self.k1 + self.k2)
    }

    /// Output power at port 1 to photon number.
    pub fn photons_from_power(&self, p_watts: f64) -> Result<f64> {
        power_to_photons(p_watts, self.k1, self.kappa_c, self.f_mode)
    }
}

/// How the pre-burst window is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineWindow {
    /// All samples with `t < end` (seconds).
    Until(f64),
    /// Everything before the first sample exceeding the mean of the first
    /// [`MIN_BASELINE_SAMPLES`] samples by five standard deviations.
    Auto,
}

pub const MIN_BASELINE_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineCorrection {
    pub trace: TimeTrace,
    /// Additive shift applied to every sample.
    pub shift: f64,
    /// Number of samples in the pre-burst window.
    pub window_len: usize,
}

/// First index whose value exceeds the leading-segment mean by 5σ.
pub fn detect_burst_onset(y: &[f64]) -> Option<usize> {
    if y.len() <= MIN_BASELINE_SAMPLES {
        return None;
    }
    let head = &y[..MIN_BASELINE_SAMPLES];
    let n = head.len() as f64;
    let mean = head.iter().sum::<f64>() / n;
    let sd = (head.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let thresh = mean + 5.0 * sd + 1e-12 * mean.abs().max(f64::MIN_POSITIVE);
    y.iter()
        .enumerate()
        .skip(MIN_BASELINE_SAMPLES)
        .find(|(_, v)| **v > thresh)
        .map(|(i, _)| i)
}

/// Shifts a photon trace so that its pre-burst mean equals `n_bar`.
pub fn baseline_correct(trace: &TimeTrace, n_bar: f64, window: BaselineWindow) -> Result<BaselineCorrection> {
    trace.expect_unit(Unit::Photons)?;
    let window_len = match window {
        BaselineWindow::Until(end) => trace.t().iter().take_while(|t| **t < end).count(),
        BaselineWindow::Auto => detect_burst_onset(trace.y()).unwrap_or(trace.len()),
    };
    if window_len == 0 {
        return Err(Error::EmptyWindow("no samples before burst onset".into()));
    }
    if window_len < MIN_BASELINE_SAMPLES {
        return Err(Error::EmptyWindow(format!(
            "pre-burst window has {window_len} samples, need at least {MIN_BASELINE_SAMPLES}"
        )));
    }
    let pre = &trace.y()[..window_len];
    let mean = pre.iter().sum::<f64>() / window_len as f64;
    let shift = n_bar - mean;
    let y = trace.y().iter().map(|v| v + shift).collect();
    Ok(BaselineCorrection {
        trace: trace.with_values(y, Unit::Photons)?,
        shift,
        window_len,
    })
}

/// A circle in the complex plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center_re: f64,
    pub center_im: f64,
    pub radius: f64,
}

impl Circle {
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// Algebraic (Kåsa) least-squares circle through complex samples:
/// minimizes `Σ (x² + y² + D x + E y + F)²`.
pub fn fit_circle(points: &[Complex64]) -> Result<Circle> {
    if points.len() < 3 {
        return Err(Error::InvalidInput("circle fit needs at least 3 points".into()));
    }
    let m = points.len();
    let a = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => points[i].re,
        1 => points[i].im,
        _ => 1.0,
    });
    let b = DVector::from_fn(m, |i, _| -points[i].norm_sqr());
    let svd = a.svd(true, true);
    if svd.singular_values.min() <= 1e-10 * svd.singular_values.max() {
        return Err(Error::InvalidInput("points are collinear or degenerate".into()));
    }
    let sol = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidInput(format!("circle fit failed: {e}")))?;
    let (d, e, f) = (sol[0], sol[1], sol[2]);
    let cx = -d / 2.0;
    let cy = -e / 2.0;
    let r2 = cx * cx + cy * cy - f;
    if !(r2 > 0.0 && r2.is_finite()) {
        return Err(Error::InvalidInput("points are collinear or degenerate".into()));
    }
    Ok(Circle {
        center_re: cx,
        center_im: cy,
        radius: r2.sqrt(),
    })
}

/// One sample of a reflection sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S11Sample {
    pub f_hz: f64,
    pub s11: Complex64,
}

/// Reads `f_Hz,re_S11,im_S11` CSV.
pub fn read_s11_csv<R: Read>(reader: R) -> Result<Vec<S11Sample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["f_Hz", "re_S11", "im_S11"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse(format!(
            "expected header 'f_Hz,re_S11,im_S11', found '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut vals = [0.0; 3];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = rec
                .get(i)
                .ok_or_else(|| Error::Parse(format!("row {}: missing column", line + 2)))?
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        }
        out.push(S11Sample {
            f_hz: vals[0],
            s11: Complex64::new(vals[1], vals[2]),
        });
    }
    Ok(out)
}
