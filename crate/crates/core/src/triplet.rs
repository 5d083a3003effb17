//! Two-sublevel triplet population kinetics.
//!
//! Only the T_x and T_z populations evolve:
//!
//! ```text
//! d/dt [N_x]   [-w - k_x      w    ] [N_x]
//!      [N_z] = [    w     -w - k_z ] [N_z]
//! ```
//!
//! The rate matrix is symmetric, so the propagator is written as
//! `exp(M t) = e^{-(w + k_avg) t} [cosh(r t) I + sinh(r t)/r · B]` with
//! `B = [[-Δk, w], [w, Δk]]` and `r = sqrt(w² + Δk²)`. When the eigenvalues
//! nearly coincide the `sinh(r t)/r` factor is evaluated by its series, which
//! is the confluent `t·e^{α t}` limit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{TimeTrace, Unit};

/// Relative eigenvalue gap below which the confluent branch is used.
const CONFLUENT_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletRateModel {
    pub n_x0: f64,
    pub n_y0: f64,
    pub n_z0: f64,
    /// Depopulation rate of T_x, s⁻¹.
    pub k_x: f64,
    /// Depopulation rate of T_z, s⁻¹.
    pub k_z: f64,
    /// Spin-lattice relaxation rate between T_x and T_z, s⁻¹.
    pub w_xz: f64,
}

impl TripletRateModel {
    /// Initial populations (x, y, z) used when none are given.
    pub const DEFAULT_POPULATIONS: (f64, f64, f64) = (0.6, 0.21, 0.19);

    pub fn new(populations: (f64, f64, f64), k_x: f64, k_z: f64, w_xz: f64) -> Result<Self> {
        let m = Self {
            n_x0: populations.0,
            n_y0: populations.1,
            n_z0: populations.2,
            k_x,
            k_z,
            w_xz,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_default_populations(k_x: f64, k_z: f64, w_xz: f64) -> Result<Self> {
        Self::new(Self::DEFAULT_POPULATIONS, k_x, k_z, w_xz)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.n_x0, self.n_y0, self.n_z0, self.k_x, self.k_z, self.w_xz];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "populations and rates must be finite and non-negative".into(),
            ));
        }
        let sum = self.n_x0 + self.n_y0 + self.n_z0;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "sublevel populations sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    fn k_avg(&self) -> f64 {
        0.5 * (self.k_x + self.k_z)
    }

    fn delta_k(&self) -> f64 {
        0.5 * (self.k_x - self.k_z)
    }

    /// Half-gap between the eigenvalues, `sqrt(w² + Δk²)`.
    fn half_gap(&self) -> f64 {
        self.w_xz.hypot(self.delta_k())
    }

    fn is_confluent(&self) -> bool {
        let (am, _) = eigenrates(self);
        2.0 * self.half_gap() < CONFLUENT_GAP * am.abs()
    }

    /// `(N_x(t), N_z(t))` for `t >= 0`.
    pub fn populations_at(&self, t: f64) -> (f64, f64) {
        let (am, ap) = eigenrates(self);
        let r = self.half_gap();
        let even = 0.5 * ((ap * t).exp() + (am * t).exp());
        let odd = if self.is_confluent() {
            // e^{-c t} sinh(r t)/r → t e^{-c t} (1 + (r t)²/6 + ...)
            let c = self.w_xz + self.k_avg();
            let x = r * t;
            t * (-c * t).exp() * (1.0 + x * x / 6.0 + x.powi(4) / 120.0)
        } else {
            ((ap * t).exp() - (am * t).exp()) / (2.0 * r)
        };
        let (dk, w) = (self.delta_k(), self.w_xz);
        let (x0, z0) = (self.n_x0, self.n_z0);
        let nx = even * x0 + odd * (-dk * x0 + w * z0);
        let nz = even * z0 + odd * (w * x0 + dk * z0);
        (nx.max(0.0), nz.max(0.0))
    }

    /// Amplitudes `(A, B)` of `N_x − N_z = A e^{α₋ t} + B e^{α₊ t}`,
    /// the projection of the initial populations onto the two eigenmodes.
    pub fn difference_amplitudes(&self) -> (f64, f64) {
        let r = self.half_gap();
        let s = self.n_x0 + self.n_z0;
        let d = self.n_x0 - self.n_z0;
        if r == 0.0 {
            return (d, 0.0);
        }
        // (1, -1)·B·n0 = -(Δk·S + w·D)
        let mixed = (self.delta_k() * s + self.w_xz * d) / r;
        (0.5 * (d + mixed), 0.5 * (d - mixed))
    }

    /// Biexponential description of the difference signal implied by the model.
    pub fn difference_biexp(&self) -> BiexpFit {
        let (am, ap) = eigenrates(self);
        let (a, b) = self.difference_amplitudes();
        BiexpFit::new(a, b, am, ap)
    }
}

/// A point of an evolved trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationSample {
    pub t: f64,
    pub n_x: f64,
    pub n_z: f64,
}

/// Closed-form populations on `t_grid` (seconds).
pub fn evolve_populations(model: &TripletRateModel, t_grid: &[f64]) -> Result<Vec<PopulationSample>> {
    model.validate()?;
    if t_grid.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidInput("time grid must start at t >= 0".into()));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("time grid must be increasing".into()));
    }
    Ok(t_grid
        .iter()
        .map(|&t| {
            let (n_x, n_z) = model.populations_at(t);
            PopulationSample { t, n_x, n_z }
        })
        .collect())
}

/// Eigenvalues `(α₋, α₊)` of the rate matrix, `α₋ <= α₊ <= 0`.
pub fn eigenrates(model: &TripletRateModel) -> (f64, f64) {
    let c = model.w_xz + model.k_avg();
    let r = model.half_gap();
    (-c - r, -c + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedDecay {
    /// `w_xz + (k_x + k_z)/2`, s⁻¹.
    pub rate: f64,
    /// Reciprocal of `rate`, s.
    pub decay_time: f64,
}

/// `w_xz + k_avg = −(α₋ + α₊)/2`. Both eigenrates must be negative.
pub fn combined_rate_from_eigen(alpha_minus: f64, alpha_plus: f64) -> Result<CombinedDecay> {
    if !(alpha_minus < 0.0 && alpha_plus < 0.0) {
        return Err(Error::InvalidInput(format!(
            "eigenrates must be negative, got ({alpha_minus}, {alpha_plus})"
        )));
    }
    let rate = -0.5 * (alpha_minus + alpha_plus);
    Ok(CombinedDecay {
        rate,
        decay_time: rate.recip(),
    })
}

/// `A e^{α₋ t} + B e^{α₊ t}` with optional one-sigma uncertainties in the
/// order (A, B, α₋, α₊).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiexpFit {
    pub a: f64,
    pub b: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub uncertainties: Option<[f64; 4]>,
}

impl BiexpFit {
    pub fn new(a: f64, b: f64, alpha_minus: f64, alpha_plus: f64) -> Self {
        Self {
            a,
            b,
            alpha_minus,
            alpha_plus,
            uncertainties: None,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.a * (self.alpha_minus * t).exp() + self.b * (self.alpha_plus * t).exp()
    }

    /// The time at which the signal changes sign, `ln(−B/A)/(α₋ − α₊)`,
    /// if it does so for `t > 0`.
    pub fn sign_change_time(&self) -> Option<f64> {
        let ratio = -self.b / self.a;
        let gap = self.alpha_minus - self.alpha_plus;
        if !(ratio > 0.0) || gap == 0.0 {
            return None;
        }
        let t = ratio.ln() / gap;
        (t > 0.0 && t.is_finite()).then_some(t)
    }
}

/// Evaluates the biexponential on `t_grid`; the result is dimensionless.
pub fn predicted_trepr_signal(fit: &BiexpFit, t_grid: &[f64]) -> Result<TimeTrace> {
    TimeTrace::from_fn(t_grid, Unit::Dimensionless, |t| fit.eval(t))
}
