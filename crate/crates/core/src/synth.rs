//! Seeded synthetic datasets used as fitting oracles.
//!
//! Every generator is deterministic for a given seed and returns the data
//! together with the parameters that produced it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maser::{simulate_maser, MaserState, MaserSystemParams};
use crate::ode::Tolerances;
use crate::spectro::SpectrumMatrix;
use crate::triplet::BiexpFit;
use crate::units::{linspace, TimeTrace, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    BiexpTrepr,
    MaserBurst,
    Rank2Tas,
    Tcspc,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [Self::BiexpTrepr, Self::MaserBurst, Self::Rank2Tas, Self::Tcspc];

    pub fn name(self) -> &'static str {
        match self {
            Self::BiexpTrepr => "biexp-trepr",
            Self::MaserBurst => "maser-burst",
            Self::Rank2Tas => "rank2-tas",
            Self::Tcspc => "tcspc",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown synthetic kind {s:?}")))
    }
}

/// trEPR difference signal `A e^{α₋t} + B e^{α₊t}` with Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiexpTreprParams {
    pub a: f64,
    pub b: f64,
    /// s⁻¹
    pub alpha_minus: f64,
    /// s⁻¹
    pub alpha_plus: f64,
    /// seconds
    pub t_end: f64,
    pub samples: usize,
    /// Noise standard deviation as a fraction of the peak |signal|.
    pub noise: f64,
}

impl Default for BiexpTreprParams {
    fn default() -> Self {
        Self {
            a: 0.547,
            b: -0.066,
            alpha_minus: -3.93e5,
            alpha_plus: -0.459e5,
            t_end: 40e-6,
            // 10 ns spacing, as an oscilloscope record would give
            samples: 4000,
            noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaserBurstParams {
    pub system: MaserSystemParams,
    /// Initial per-spin inversion.
    pub inversion0: f64,
    /// seconds
    pub t_end: f64,
    pub samples: usize,
    /// Multiplicative Gaussian noise, relative standard deviation.
    pub noise: f64,
}

impl Default for MaserBurstParams {
    fn default() -> Self {
        Self {
            system: MaserSystemParams::reference(),
            inversion0: 0.52,
            t_end: 10e-6,
            samples: 401,
            noise: 0.0,
        }
    }
}

/// Two decays with overlapping bleach/absorption-like spectra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rank2TasParams {
    /// ps
    pub tau1: f64,
    /// ps
    pub tau2: f64,
    pub wavelength_range: (f64, f64),
    pub wavelengths: usize,
    /// ps
    pub delay_end: f64,
    pub delays: usize,
    /// Noise standard deviation as a fraction of the peak |ΔA|.
    pub noise: f64,
}

impl Default for Rank2TasParams {
    fn default() -> Self {
        Self {
            tau1: 450.0,
            tau2: 650.0,
            wavelength_range: (450.0, 900.0),
            wavelengths: 150,
            delay_end: 4000.0,
            delays: 200,
            noise: 0.01,
        }
    }
}

/// Decay histogram: linear rise to the peak, then `Σ aᵢ e^{−t/τᵢ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcspcParams {
    /// (amplitude fraction, lifetime in seconds)
    pub components: Vec<(f64, f64)>,
    /// Counts at the peak.
    pub peak_counts: f64,
    /// seconds
    pub rise_time: f64,
    /// seconds
    pub t_end: f64,
    pub samples: usize,
    /// Draw Poisson counts instead of the noiseless expectation.
    pub poisson: bool,
}

impl Default for TcspcParams {
    fn default() -> Self {
        Self {
            components: vec![(0.96, 0.46e-9), (0.04, 3.7e-9)],
            peak_counts: 1e4,
            rise_time: 1e-9,
            t_end: 40e-9,
            samples: 1000,
            poisson: true,
        }
    }
}

/// Generating parameters, tagged by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthParams {
    BiexpTrepr(BiexpTreprParams),
    MaserBurst(MaserBurstParams),
    Rank2Tas(Rank2TasParams),
    Tcspc(TcspcParams),
}

impl SynthParams {
    pub fn default_for(kind: SynthKind) -> Self {
        match kind {
            SynthKind::BiexpTrepr => Self::BiexpTrepr(Default::default()),
            SynthKind::MaserBurst => Self::MaserBurst(Default::default()),
            SynthKind::Rank2Tas => Self::Rank2Tas(Default::default()),
            SynthKind::Tcspc => Self::Tcspc(Default::default()),
        }
    }

    /// Reads the parameters for `kind` from a JSON object; missing fields
    /// take their defaults.
    pub fn from_json(kind: SynthKind, value: serde_json::Value) -> Result<Self> {
        Ok(match kind {
            SynthKind::BiexpTrepr => Self::BiexpTrepr(serde_json::from_value(value)?),
            SynthKind::MaserBurst => Self::MaserBurst(serde_json::from_value(value)?),
            SynthKind::Rank2Tas => Self::Rank2Tas(serde_json::from_value(value)?),
            SynthKind::Tcspc => Self::Tcspc(serde_json::from_value(value)?),
        })
    }

    pub fn kind(&self) -> SynthKind {
        match self {
            Self::BiexpTrepr(_) => SynthKind::BiexpTrepr,
            Self::MaserBurst(_) => SynthKind::MaserBurst,
            Self::Rank2Tas(_) => SynthKind::Rank2Tas,
            Self::Tcspc(_) => SynthKind::Tcspc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthData {
    Trace(TimeTrace),
    Matrix(SpectrumMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub data: SynthData,
    pub params: SynthParams,
    pub seed: u64,
}

impl SynthOutput {
    /// Sidecar document: kind, seed and every generating parameter.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "params": self.params,
        })
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {n}")));
    }
    Ok(())
}

fn noise_level(y: &[f64], frac: f64) -> Result<f64> {
    if !(frac >= 0.0 && frac.is_finite()) {
        return Err(Error::InvalidInput(format!("noise level {frac} must be >= 0")));
    }
    Ok(frac * y.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

pub fn gen_synthetic(params: &SynthParams, seed: u64) -> Result<SynthOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match params {
        SynthParams::BiexpTrepr(p) => {
            check_samples(p.samples)?;
            let fit = BiexpFit::new(p.a, p.b, p.alpha_minus, p.alpha_plus);
            let t = linspace(0.0, p.t_end, p.samples);
            let clean: Vec<f64> = t.iter().map(|t| fit.eval(*t)).collect();
            let sigma = noise_level(&clean, p.noise)?;
            let y = clean
                .iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            SynthData::Trace(TimeTrace::new(t, y, Unit::Dimensionless)?)
        }
        SynthParams::MaserBurst(p) => {
            check_samples(p.samples)?;
            noise_level(&[], p.noise)?;
            let t = linspace(0.0, p.t_end, p.samples);
            let init = MaserState::initial(p.system.n_bar, p.inversion0);
            let traj = simulate_maser(&p.system, &init, (0.0, p.t_end), Tolerances::default(), Some(&t))?;
            let y = traj
                .photon_numbers()
                .iter()
                .map(|v| v * (1.0 + p.noise * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            SynthData::Trace(TimeTrace::new(t, y, Unit::Photons)?)
        }
        SynthParams::Rank2Tas(p) => {
            check_samples(p.wavelengths)?;
            check_samples(p.delays)?;
            if !(p.tau1 > 0.0 && p.tau2 > 0.0) {
                return Err(Error::InvalidInput("lifetimes must be positive".into()));
            }
            let wl = linspace(p.wavelength_range.0, p.wavelength_range.1, p.wavelengths);
            let d = linspace(0.0, p.delay_end, p.delays);
            let (lo, hi) = p.wavelength_range;
            let at = |x: f64| lo + x * (hi - lo);
            let g = |l: f64, c: f64, w: f64| (-((l - c) / w).powi(2)).exp();
            let w = 0.11 * (hi - lo);
            // bleach shared by both species, distinct absorption bands
            let s1 = |l: f64| g(l, at(0.33), w) - 0.8 * g(l, at(0.56), 1.2 * w);
            let s2 = |l: f64| -g(l, at(0.33), w) + 0.3 * g(l, at(0.73), w);
            let clean: Vec<Vec<f64>> = wl
                .iter()
                .map(|l| {
                    d.iter()
                        .map(|t| s1(*l) * (-t / p.tau1).exp() + s2(*l) * (-t / p.tau2).exp())
                        .collect()
                })
                .collect();
            let flat: Vec<f64> = clean.iter().flatten().cloned().collect();
            let sigma = noise_level(&flat, p.noise)?;
            let rows = clean
                .into_iter()
                .map(|r| {
                    r.into_iter()
                        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            SynthData::Matrix(SpectrumMatrix::new(wl, d, rows)?)
        }
        SynthParams::Tcspc(p) => {
            check_samples(p.samples)?;
            if p.components.is_empty() || p.components.iter().any(|(a, tau)| !(*tau > 0.0) || !a.is_finite()) {
                return Err(Error::InvalidInput("components need finite amplitudes and positive lifetimes".into()));
            }
            if !(p.peak_counts > 0.0 && p.rise_time > 0.0 && p.rise_time < p.t_end) {
                return Err(Error::InvalidInput("peak counts and rise time must be positive".into()));
            }
            let total: f64 = p.components.iter().map(|c| c.0).sum();
            let t = linspace(0.0, p.t_end, p.samples);
            let y = t
                .iter()
                .map(|t| {
                    let s = t - p.rise_time;
                    let mean = if s < 0.0 {
                        p.peak_counts * t / p.rise_time
                    } else {
                        p.peak_counts / total * p.components.iter().map(|(a, tau)| a * (-s / tau).exp()).sum::<f64>()
                    };
                    if p.poisson && mean > 0.0 {
                        let dist = Poisson::new(mean).map_err(|e| Error::InvalidInput(e.to_string()))?;
                        Ok(rng.sample(dist))
                    } else {
                        Ok(mean)
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            SynthData::Trace(TimeTrace::new(t, y, Unit::Dimensionless)?)
        }
    };
    Ok(SynthOutput {
        data,
        params: params.clone(),
        seed,
    })
}
