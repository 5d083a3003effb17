//! Nonlinear least squares and the model-specific fitting drivers.

pub mod exp;
pub mod lm;
pub mod maser_fit;

pub use exp::{fit_biexponential, fit_exponentials, BiexpOutcome, ExpSumFit};
pub use lm::{nlls_minimize, FitMethod, FitProblem, FitResult, LmOptions, LossSpace};
pub use maser_fit::{fit_maser_parameters, MaserFitOutcome, MaserFixed};
