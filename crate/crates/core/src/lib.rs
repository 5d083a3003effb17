//! Simulation and analysis toolkit for zero-field, room-temperature masers.
//!
//! - [`units`]: constants, dBm/W and Hz/rad·s⁻¹ conversions, [`units::TimeTrace`]
//! - [`triplet`]: T_x/T_z population kinetics and biexponential trEPR signals
//! - [`cavity`]: Q-circle coupling, loaded/unloaded Q, thermal photons, power → photons
//! - [`maser`]: mean-field Tavis–Cummings maser equations and cooperativity
//! - [`ode`]: Dormand–Prince 5(4) integrator with dense output
//! - [`rabi`]: oscillation-frequency extraction from bursts
//! - [`fit`]: Levenberg–Marquardt machinery and the fitting drivers
//! - [`spectro`]: SVD global analysis, TCSPC tails, photophysical rates
//! - [`synth`]: deterministic synthetic datasets
//! - [`cli`]: the `zfmaser` command-line front end

pub mod cavity;
pub mod cli;
pub mod error;
pub mod fit;
pub mod maser;
pub mod ode;
pub mod rabi;
pub mod spectro;
pub mod synth;
pub mod triplet;
pub mod units;

pub use error::{Error, Result};
