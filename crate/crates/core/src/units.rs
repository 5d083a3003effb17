//! Physical constants, unit conversions and the shared [`TimeTrace`] container.
//!
//! Rates are stored in s⁻¹ everywhere in the crate. Where a quantity is
//! quoted as "2π × f", it is converted once with [`ordinary_to_angular`] at
//! the point of ingestion and never again.

use std::f64::consts::TAU;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CODATA exact SI constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysConstants {
    /// Planck constant, J·s.
    pub h: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
}

pub const PLANCK: f64 = 6.626_070_15e-34;
pub const BOLTZMANN: f64 = 1.380_649e-23;

pub const CONSTANTS: PhysConstants = PhysConstants {
    h: PLANCK,
    k_b: BOLTZMANN,
};

/// Unit tag carried by a [`TimeTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Dbm,
    Watts,
    Photons,
    Volts,
    Dimensionless,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Unit::Dbm => "dbm",
            Unit::Watts => "watts",
            Unit::Photons => "photons",
            Unit::Volts => "volts",
            Unit::Dimensionless => "dimensionless",
        };
        f.write_str(s)
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dbm" => Ok(Unit::Dbm),
            "watts" | "w" => Ok(Unit::Watts),
            "photons" => Ok(Unit::Photons),
            "volts" | "v" => Ok(Unit::Volts),
            "dimensionless" | "none" => Ok(Unit::Dimensionless),
            other => Err(Error::InvalidInput(format!("unknown unit '{other}'"))),
        }
    }
}

/// Power in dBm to watts: `10^((p - 30) / 10)`.
pub fn dbm_to_watts(p_dbm: f64) -> Result<f64> {
    if !p_dbm.is_finite() {
        return Err(Error::InvalidInput(format!("power {p_dbm} dBm is not finite")));
    }
    Ok(10f64.powf((p_dbm - 30.0) / 10.0))
}

/// Inverse of [`dbm_to_watts`]. Requires a strictly positive power.
pub fn watts_to_dbm(p_watts: f64) -> Result<f64> {
    if !(p_watts.is_finite() && p_watts > 0.0) {
        return Err(Error::InvalidInput(format!(
            "power {p_watts} W must be finite and positive"
        )));
    }
    Ok(10.0 * p_watts.log10() + 30.0)
}

/// Ordinary frequency (Hz) to angular rate (rad/s).
pub fn ordinary_to_angular(f_hz: f64) -> f64 {
    TAU * f_hz
}

pub fn angular_to_ordinary(omega: f64) -> f64 {
    omega / TAU
}

/// Seconds to microseconds, the plotting unit used at the file boundary.
pub fn s_to_us(t: f64) -> f64 {
    t * 1e6
}

pub fn us_to_s(t: f64) -> f64 {
    t * 1e-6
}

/// A sampled 1-D signal. Times are in seconds and strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    t: Vec<f64>,
    y: Vec<f64>,
    unit: Unit,
}

impl TimeTrace {
    pub fn new(t: Vec<f64>, y: Vec<f64>, unit: Unit) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "time axis has {} samples but values have {}",
                t.len(),
                y.len()
            )));
        }
        if let Some(i) = t.iter().chain(y.iter()).position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at flat index {i}")));
        }
        if let Some(i) = t.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "times not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { t, y, unit })
    }

    /// Builds a trace by evaluating `f` on every time in `t`.
    pub fn from_fn(t: &[f64], unit: Unit, f: impl Fn(f64) -> f64) -> Result<Self> {
        let y = t.iter().map(|&ti| f(ti)).collect();
        Self::new(t.to_vec(), y, unit)
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Fails with [`Error::UnitMismatch`] unless the trace carries `expected`.
    pub fn expect_unit(&self, expected: Unit) -> Result<()> {
        if self.unit == expected {
            Ok(())
        } else {
            Err(Error::UnitMismatch {
                expected: expected.to_string(),
                found: self.unit.to_string(),
            })
        }
    }

    /// Same samples with a new unit tag. Used after an explicit conversion.
    pub fn with_values(&self, y: Vec<f64>, unit: Unit) -> Result<Self> {
        Self::new(self.t.clone(), y, unit)
    }

    /// Samples with `lo <= t <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> Result<Self> {
        let (t, y): (Vec<f64>, Vec<f64>) = self
            .t
            .iter()
            .zip(&self.y)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .map(|(t, y)| (*t, *y))
            .unzip();
        Self::new(t, y, self.unit)
    }

    /// Converts a dBm trace to watts.
    pub fn dbm_to_watts(&self) -> Result<Self> {
        self.expect_unit(Unit::Dbm)?;
        let y = self.y.iter().map(|&p| dbm_to_watts(p)).collect::<Result<_>>()?;
        self.with_values(y, Unit::Watts)
    }

    /// Reads the `t_us,value` CSV format. The unit is not stored in the file.
    pub fn read_csv<R: Read>(reader: R, unit: Unit) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "t_us" || &headers[1] != "value" {
            return Err(Error::Parse(format!(
                "expected header 't_us,value', found '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut t = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Parse(format!("row {}: missing column {i}", line + 2)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))
            };
            t.push(us_to_s(parse(0)?));
            y.push(parse(1)?);
        }
        Self::new(t, y, unit)
    }

    /// Writes the `t_us,value` CSV format with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t_us", "value"])?;
        for (t, y) in self.t.iter().zip(&self.y) {
            wtr.write_record([fmt_full(s_to_us(*t)), fmt_full(*y)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

/// `n` evenly spaced points on `[start, end]`.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (end - start) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { end } else { start + step * i as f64 })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn dbm_reference_points() {
        assert_relative_eq!(dbm_to_watts(0.0).unwrap(), 1.0e-3, max_relative = 1e-15);
        assert_relative_eq!(dbm_to_watts(-10.0).unwrap(), 1.0e-4, max_relative = 1e-15);
        assert_relative_eq!(dbm_to_watts(-70.0).unwrap(), 1.0e-10, max_relative = 1e-15);
        assert!(dbm_to_watts(f64::NAN).is_err());
        assert!(dbm_to_watts(f64::INFINITY).is_err());
    }

    #[test]
    fn angular_reference_points() {
        assert_eq!(ordinary_to_angular(0.0), 0.0);
        assert_relative_eq!(ordinary_to_angular(1.0e6), 6.283_185_3e6, max_relative = 1e-8);
        // g_e of the fitted maser: 2π × 2.3 MHz
        assert_relative_eq!(ordinary_to_angular(2.3e6), 1.4451e7, max_relative = 1e-4);
    }

    #[test]
    fn trace_validation() {
        assert!(TimeTrace::new(vec![0.0, 1.0], vec![1.0], Unit::Volts).is_err());
        assert!(TimeTrace::new(vec![0.0, 0.0], vec![1.0, 2.0], Unit::Volts).is_err());
        assert!(TimeTrace::new(vec![0.0, 1.0], vec![1.0, f64::NAN], Unit::Volts).is_err());
        let tr = TimeTrace::new(vec![0.0, 1.0], vec![1.0, 2.0], Unit::Volts).unwrap();
        assert!(tr.expect_unit(Unit::Volts).is_ok());
        assert!(matches!(
            tr.expect_unit(Unit::Photons),
            Err(Error::UnitMismatch { .. })
        ));
        assert!(tr.dbm_to_watts().is_err());
    }

    #[test]
    fn csv_rejects_bad_header() {
        let data = "time,value\n0,1\n";
        assert!(matches!(
            TimeTrace::read_csv(data.as_bytes(), Unit::Volts),
            Err(Error::Parse(_))
        ));
        let data = "t_us,value\n0,abc\n";
        assert!(TimeTrace::read_csv(data.as_bytes(), Unit::Volts).is_err());
    }

    proptest! {
        #[test]
        fn dbm_round_trip(p in -120.0f64..30.0) {
            let back = watts_to_dbm(dbm_to_watts(p).unwrap()).unwrap();
            prop_assert!((back - p).abs() <= 1e-12 * p.abs().max(1.0));
        }

        #[test]
        fn csv_round_trip(ys in proptest::collection::vec(-1e20f64..1e20, 1..40), dt in 1e-9f64..1e-3) {
            let t: Vec<f64> = (0..ys.len()).map(|i| i as f64 * dt).collect();
            let tr = TimeTrace::new(t, ys, Unit::Photons).unwrap();
            let mut buf = Vec::new();
            tr.write_csv(&mut buf).unwrap();
            let back = TimeTrace::read_csv(buf.as_slice(), Unit::Photons).unwrap();
            for (a, b) in tr.y().iter().zip(back.y()) {
                prop_assert_eq!(a, b);
            }
            for (a, b) in tr.t().iter().zip(back.t()) {
                prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
            }
        }
    }
}
