//! Mean-field Tavis–Cummings maser dynamics.
//!
//! Four expectation values are evolved: the cavity photon number ⟨a†a⟩, the
//! spin-photon coherence ⟨S⁺a⟩, the normalized inversion ⟨S̃ᶻ⟩ and the spin
//! correlation ⟨S⁺S⁻⟩. With `c = ⟨S⁺a⟩`, the combination `c − c*` equals
//! `2i·Im c`, so the three real components have real derivatives:
//!
//! ```text
//! d⟨a†a⟩/dt  = −κ_c (⟨a†a⟩ − n̄) − 2 g Im c
//! dc/dt      = −½(κ_c + γ + κ_s + 2iΔ) c − i g ((S_z + 1)/2 + (1 − 1/N)⟨S⁺S⁻⟩ + ⟨a†a⟩ S_z)
//! dS_z/dt    = −γ S_z + (4 g / N) Im c
//! d⟨S⁺S⁻⟩/dt = −(γ + κ_s)⟨S⁺S⁻⟩ − 2 g S_z Im c
//! ```
//!
//! Integration runs on the state divided by N (photon number, coherence and
//! correlation), which keeps every component of order one.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Dopri5, Solution, Stats, Tolerances};
use crate::units::linspace;

/// Rates in s⁻¹. Quantities quoted as "2π × f" must already be angular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaserSystemParams {
    /// Ensemble spin-photon coupling.
    pub g_e: f64,
    /// Cavity decay rate.
    pub kappa_c: f64,
    /// Spin dephasing rate.
    pub kappa_s: f64,
    /// Spin-lattice relaxation rate.
    pub gamma: f64,
    /// Spin-cavity detuning.
    #[serde(default)]
    pub delta: f64,
    /// Number of participating spins.
    pub n_spins: f64,
    /// Thermal photon number of the mode.
    pub n_bar: f64,
}

impl MaserSystemParams {
    /// The fitted diazapentacene maser: g_e = 2π×2.3 MHz, κ_s = 2π×0.29 MHz,
    /// κ_c = 2π×1478 MHz / 3690, γ = 0.2e6 s⁻¹, N = 9.7e14, n̄ = 4097.
    pub fn reference() -> Self {
        use std::f64::consts::TAU;
        Self {
            g_e: TAU * 2.3e6,
            kappa_c: TAU * 1478e6 / 3690.0,
            kappa_s: TAU * 0.29e6,
            gamma: 0.2e6,
            delta: 0.0,
            n_spins: 9.7e14,
            n_bar: 4097.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.g_e, self.kappa_c, self.kappa_s, self.gamma, self.n_bar];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidInput("maser rates must be finite and >= 0".into()));
        }
        if !(self.n_spins >= 1.0 && self.n_spins.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "spin number {} must be >= 1",
                self.n_spins
            )));
        }
        Ok(())
    }

    pub fn cooperativity(&self) -> Result<f64> {
        cooperativity(self.g_e, self.kappa_c, self.kappa_s)
    }
}

/// Expectation values of the maser. `spin_correlation` is ⟨S⁺S⁻⟩ before
/// normalization by N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaserState {
    pub photon_number: f64,
    pub coherence: Complex64,
    pub inversion: f64,
    pub spin_correlation: f64,
}

impl MaserState {
    /// Thermal cavity, inverted spins, no coherence or correlation.
    pub fn initial(n_bar: f64, inversion: f64) -> Self {
        Self {
            photon_number: n_bar,
            coherence: Complex64::new(0.0, 0.0),
            inversion,
            spin_correlation: 0.0,
        }
    }

    /// Inversion implied by sublevel populations, `(n_x − n_z)/(n_x + n_z)`.
    pub fn inversion_from_populations(n_x: f64, n_z: f64) -> f64 {
        (n_x - n_z) / (n_x + n_z)
    }

    /// ⟨a†a⟩ + (N/2)⟨S̃ᶻ⟩, conserved when all losses vanish.
    pub fn excitation(&self, n_spins: f64) -> f64 {
        self.photon_number + 0.5 * n_spins * self.inversion
    }

    fn to_scaled(self, n: f64) -> [f64; 5] {
        [
            self.photon_number / n,
            self.coherence.re / n,
            self.coherence.im / n,
            self.inversion,
            self.spin_correlation / n,
        ]
    }

    fn from_scaled(y: &[f64], n: f64) -> Self {
        Self {
            photon_number: y[0] * n,
            coherence: Complex64::new(y[1] * n, y[2] * n),
            inversion: y[3],
            spin_correlation: y[4] * n,
        }
    }
}

/// Time derivative of the state.
pub fn maser_rhs(state: &MaserState, p: &MaserSystemParams) -> MaserState {
    let n = p.n_spins;
    let c = state.coherence;
    let im = c.im;
    let sz = state.inversion;
    let decay = Complex64::new(-0.5 * (p.kappa_c + p.gamma + p.kappa_s), -p.delta);
    let drive = 0.5 * (sz + 1.0) + (1.0 - 1.0 / n) * state.spin_correlation + state.photon_number * sz;
    MaserState {
        photon_number: -p.kappa_c * (state.photon_number - p.n_bar) - 2.0 * p.g_e * im,
        coherence: decay * c - Complex64::new(0.0, p.g_e * drive),
        inversion: -p.gamma * sz + 4.0 * p.g_e / n * im,
        spin_correlation: -(p.gamma + p.kappa_s) * state.spin_correlation - 2.0 * p.g_e * sz * im,
    }
}

/// Right-hand side on the N-scaled state `[P, Re X, Im X, S_z, Q]`.
fn scaled_rhs(p: &MaserSystemParams, y: &[f64], dy: &mut [f64]) {
    let n = p.n_spins;
    let (ph, xr, xi, sz, q) = (y[0], y[1], y[2], y[3], y[4]);
    let half = 0.5 * (p.kappa_c + p.gamma + p.kappa_s);
    let drive = 0.5 * (sz + 1.0) / n + (1.0 - 1.0 / n) * q + ph * sz;
    dy[0] = -p.kappa_c * (ph - p.n_bar / n) - 2.0 * p.g_e * xi;
    // (−half − iΔ)(xr + i xi) − i g drive
    dy[1] = -half * xr + p.delta * xi;
    dy[2] = -half * xi - p.delta * xr - p.g_e * drive;
    dy[3] = -p.gamma * sz + 4.0 * p.g_e * xi;
    dy[4] = -(p.gamma + p.kappa_s) * q - 2.0 * p.g_e * sz * xi;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaserTrajectory {
    pub t: Vec<f64>,
    pub states: Vec<MaserState>,
    /// Accumulated embedded error estimate per output point, on the physical
    /// scale of each field.
    pub error_estimate: Vec<MaserState>,
    pub stats: Stats,
}

impl MaserTrajectory {
    pub fn photon_numbers(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.photon_number).collect()
    }

    /// Index and value of the largest photon number.
    pub fn peak(&self) -> Option<(usize, f64)> {
        self.states
            .iter()
            .map(|s| s.photon_number)
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// The field components start near `n̄/N`, far below any useful absolute
/// tolerance on the scaled state, so their `atol` is expressed per photon
/// rather than per spin.
fn atol_weights(n_spins: f64) -> Vec<f64> {
    let w = 1.0 / n_spins;
    vec![w, w, w, 1.0, 1.0]
}

/// Output grid used when none is given.
pub const DEFAULT_OUTPUT_POINTS: usize = 2000;

/// Integrates the maser equations on `grid` (seconds) inside `t_span`.
/// With `grid = None`, [`DEFAULT_OUTPUT_POINTS`] uniform points are used.
pub fn simulate_maser(
    params: &MaserSystemParams,
    init: &MaserState,
    t_span: (f64, f64),
    tol: Tolerances,
    grid: Option<&[f64]>,
) -> Result<MaserTrajectory> {
    params.validate()?;
    let default_grid;
    let grid = match grid {
        Some(g) => g,
        None => {
            default_grid = linspace(t_span.0, t_span.1, DEFAULT_OUTPUT_POINTS);
            &default_grid
        }
    };
    let n = params.n_spins;
    let y0 = init.to_scaled(n);
    let Solution {
        t,
        y,
        error_estimate,
        stats,
    } = Dopri5::new(tol)
        .with_atol_weights(atol_weights(n))
        .integrate(|_, y, dy| scaled_rhs(params, y, dy), t_span, &y0, grid)?;
    Ok(MaserTrajectory {
        t,
        states: y.iter().map(|v| MaserState::from_scaled(v, n)).collect(),
        error_estimate: error_estimate
            .iter()
            .map(|v| MaserState::from_scaled(v, n))
            .collect(),
        stats,
    })
}

/// `C = 4 g_e² / (κ_c κ_s)`.
pub fn cooperativity(g_e: f64, kappa_c: f64, kappa_s: f64) -> Result<f64> {
    if !(kappa_c > 0.0 && kappa_s > 0.0) {
        return Err(Error::InvalidInput(format!(
            "cooperativity needs κ_c, κ_s > 0, got {kappa_c}, {kappa_s}"
        )));
    }
    Ok(4.0 * g_e * g_e / (kappa_c * kappa_s))
}

/// Vacuum-Rabi prediction `Ω = 2 g_e` (angular).
pub fn predicted_rabi(g_e: f64) -> f64 {
    2.0 * g_e
}
