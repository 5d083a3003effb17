//! Adaptive explicit Runge–Kutta 5(4) with Dormand–Prince coefficients,
//! FSAL stages and the 4th-order continuous extension for dense output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th minus 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-12,
        }
    }
}

impl Tolerances {
    pub fn new(rtol: f64, atol: f64) -> Result<Self> {
        if !(rtol > 0.0 && atol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        Ok(Self { rtol, atol })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rtol: self.rtol * factor,
            atol: self.atol * factor,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Trajectory sampled on the requested output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// Running sum of the absolute embedded error estimates, per component,
    /// up to each output time.
    pub error_estimate: Vec<Vec<f64>>,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dopri5 {
    pub tol: Tolerances,
    pub max_steps: usize,
    pub h_max: Option<f64>,
    /// Per-component multipliers on `atol`; all ones when `None`.
    pub atol_weights: Option<Vec<f64>>,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            max_steps: 1_000_000,
            h_max: None,
            atol_weights: None,
        }
    }
}

impl Dopri5 {
    pub fn new(tol: Tolerances) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn with_atol_weights(mut self, w: Vec<f64>) -> Self {
        self.atol_weights = Some(w);
        self
    }

    fn atol(&self, i: usize) -> f64 {
        match &self.atol_weights {
            Some(w) => self.tol.atol * w[i],
            None => self.tol.atol,
        }
    }

    fn err_norm(&self, y0: &[f64], y1: &[f64], err: &[f64]) -> f64 {
        let n = y0.len() as f64;
        let s: f64 = y0
            .iter()
            .zip(y1)
            .zip(err)
            .enumerate()
            .map(|(i, ((a, b), e))| {
                let sc = self.atol(i) + self.tol.rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum();
        (s / n).sqrt()
    }

    /// Starting step from the local scale of the solution and its derivative.
    fn initial_step<F>(&self, f: &F, t0: f64, y0: &[f64], f0: &[f64], span: f64) -> f64
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = y0.len();
        let sc: Vec<f64> = y0
            .iter()
            .enumerate()
            .map(|(i, y)| self.atol(i) + self.tol.rtol * y.abs())
            .collect();
        let rms = |v: &[f64]| {
            (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        let d0 = rms(y0);
        let d1 = rms(f0);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(span);
        let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, d)| y + h0 * d).collect();
        let mut f1 = vec![0.0; n];
        f(t0 + h0, &y1, &mut f1);
        let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
        let d2 = rms(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        (100.0 * h0).min(h1).min(span)
    }

    /// Integrates `dy/dt = f(t, y)` from `t_span.0` to `t_span.1`, returning
    /// the solution at each time in `t_out` (which must lie inside the span
    /// and be increasing).
    pub fn integrate<F>(&self, f: F, t_span: (f64, f64), y0: &[f64], t_out: &[f64]) -> Result<Solution>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let (t0, t_end) = t_span;
        if !(t0 < t_end) {
            return Err(Error::InvalidInput(format!("empty time span ({t0}, {t_end})")));
        }
        if t_out.iter().any(|t| *t < t0 || *t > t_end) || t_out.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput(
                "output times must be increasing and inside the span".into(),
            ));
        }
        Tolerances::new(self.tol.rtol, self.tol.atol)?;
        let n = y0.len();
        if let Some(w) = &self.atol_weights {
            if w.len() != n || w.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidInput("atol weights must be positive, one per component".into()));
            }
        }
        let mut stats = Stats::default();
        let mut out_t = Vec::with_capacity(t_out.len());
        let mut out_y = Vec::with_capacity(t_out.len());
        let mut out_e = Vec::with_capacity(t_out.len());
        let mut next_out = 0;

        let mut t = t0;
        let mut y = y0.to_vec();
        let mut acc_err = vec![0.0; n];
        while next_out < t_out.len() && t_out[next_out] <= t0 {
            out_t.push(t_out[next_out]);
            out_y.push(y.clone());
            out_e.push(acc_err.clone());
            next_out += 1;
        }

        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut ytmp = vec![0.0; n];
        let mut ynew = vec![0.0; n];
        let mut err = vec![0.0; n];

        f(t, &y, &mut k1);
        stats.evaluations += 1;
        let span = t_end - t0;
        let h_max = self.h_max.unwrap_or(span).min(span);
        let mut h = self.initial_step(&f, t, &y, &k1, span).min(h_max);
        stats.evaluations += 1;

        let mut steps = 0usize;
        while t < t_end {
            if steps >= self.max_steps {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: format!("exceeded {} steps", self.max_steps),
                });
            }
            steps += 1;
            if h < 16.0 * f64::EPSILON * t.abs().max(span) {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            let last = t + h >= t_end;
            if last {
                h = t_end - t;
            }

            for i in 0..n {
                ytmp[i] = y[i] + h * A21 * k1[i];
            }
            f(t + C2 * h, &ytmp, &mut k2);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * h, &ytmp, &mut k3);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * h, &ytmp, &mut k4);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * h, &ytmp, &mut k5);
            for i in 0..n {
                ytmp[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(t + h, &ytmp, &mut k6);
            for i in 0..n {
                ynew[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            f(t + h, &ynew, &mut k7);
            stats.evaluations += 6;
            for i in 0..n {
                err[i] = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
            }
            let en = self.err_norm(&y, &ynew, &err);
            if !en.is_finite() {
                stats.rejected += 1;
                h *= FAC_MIN;
                continue;
            }
            if en <= 1.0 {
                stats.accepted += 1;
                let t_new = if last { t_end } else { t + h };
                for i in 0..n {
                    acc_err[i] += err[i].abs();
                }
                // dense output on (t, t_new]
                while next_out < t_out.len() && t_out[next_out] <= t_new {
                    let to = t_out[next_out];
                    let theta = ((to - t) / h).clamp(0.0, 1.0);
                    let th1 = 1.0 - theta;
                    let yi: Vec<f64> = (0..n)
                        .map(|i| {
                            let r2 = ynew[i] - y[i];
                            let r3 = h * k1[i] - r2;
                            let r4 = r2 - h * k7[i] - r3;
                            let r5 = h
                                * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i]
                                    + D6 * k6[i]
                                    + D7 * k7[i]);
                            y[i] + theta * (r2 + th1 * (r3 + theta * (r4 + th1 * r5)))
                        })
                        .collect();
                    out_t.push(to);
                    out_y.push(yi);
                    out_e.push(acc_err.clone());
                    next_out += 1;
                }
                t = t_new;
                std::mem::swap(&mut y, &mut ynew);
                std::mem::swap(&mut k1, &mut k7);
                let fac = (SAFETY * en.max(1e-10).powf(-0.2)).clamp(FAC_MIN, FAC_MAX);
                h = (h * fac).min(h_max);
            } else {
                stats.rejected += 1;
                let fac = (SAFETY * en.powf(-0.2)).clamp(FAC_MIN, 1.0);
                h *= fac;
            }
        }
        Ok(Solution {
            t: out_t,
            y: out_y,
            error_estimate: out_e,
            stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay() {
        let sol = Dopri5::default()
            .integrate(|_, y, dy| dy[0] = -2.0 * y[0], (0.0, 3.0), &[1.0], &[0.0, 0.5, 1.0, 3.0])
            .unwrap();
        for (t, y) in sol.t.iter().zip(&sol.y) {
            assert_relative_eq!(y[0], (-2.0 * t).exp(), max_relative = 1e-7);
        }
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.1).collect();
        let sol = Dopri5::new(Tolerances::new(1e-10, 1e-12).unwrap())
            .integrate(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                (0.0, 20.0),
                &[1.0, 0.0],
                &grid,
            )
            .unwrap();
        assert_eq!(sol.t.len(), grid.len());
        for (t, y) in sol.t.iter().zip(&sol.y) {
            assert!((y[0] - t.cos()).abs() < 1e-8);
            assert!((y[1] + t.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn underflow_reports_last_time() {
        // blows up at t = 1
        let res = Dopri5::default().integrate(|_, y, dy| dy[0] = y[0] * y[0], (0.0, 2.0), &[1.0], &[2.0]);
        match res {
            Err(Error::IntegrationFailure { t, .. }) => assert!(t > 0.9 && t < 1.001, "t = {t}"),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn bad_inputs() {
        let f = |_: f64, _: &[f64], dy: &mut [f64]| dy[0] = 0.0;
        assert!(Dopri5::default().integrate(f, (1.0, 1.0), &[0.0], &[]).is_err());
        assert!(Dopri5::default().integrate(f, (0.0, 1.0), &[0.0], &[2.0]).is_err());
        assert!(Dopri5::new(Tolerances { rtol: 0.0, atol: 1.0 })
            .integrate(f, (0.0, 1.0), &[0.0], &[1.0])
            .is_err());
    }
}
