//! Rabi-frequency extraction from the ripple on a maser burst.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::units::{TimeTrace, Unit};

/// Minimum ratio of the chosen peak to the median spectral magnitude.
pub const MIN_PEAK_TO_FLOOR: f64 = 3.0;
/// Minimum number of oscillation periods inside the analysed window.
pub const MIN_PERIODS: f64 = 4.0;

/// Dominant oscillation frequency (Hz) of `trace` inside `window` (seconds).
///
/// The segment is resampled onto a uniform grid if needed, mean-detrended,
/// Hann-windowed and zero-padded to four times the next power of two. Bins
/// below [`MIN_PERIODS`] cycles per window belong to the burst envelope and
/// are skipped, as is any lobe still falling away from them. The largest
/// remaining bin is refined by a parabola through its log-magnitude neighbours.
pub fn extract_rabi_frequency(trace: &TimeTrace, window: (f64, f64)) -> Result<f64> {
    trace.expect_unit(Unit::Photons)?;
    let seg = trace.window(window.0, window.1)?;
    dominant_frequency(seg.t(), seg.y())
}

/// Same analysis on raw samples, for signals that are not photon traces.
pub fn dominant_frequency(t: &[f64], y: &[f64]) -> Result<f64> {
    let n = t.len();
    if n < 8 {
        return Err(Error::EmptyWindow(format!("{n} samples in the analysis window")));
    }
    let span = t[n - 1] - t[0];
    let dt = span / (n - 1) as f64;
    let samples = resample_uniform(t, y, dt);

    let mean = samples.iter().sum::<f64>() / n as f64;
    let padded = (4 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            Complex::new((v - mean) * w, 0.0)
        })
        .collect();
    buf.resize(padded, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let mag: Vec<f64> = buf[..padded / 2 + 1].iter().map(|c| c.norm()).collect();

    // bins below MIN_PERIODS cycles per window belong to the envelope
    let df = 1.0 / (padded as f64 * dt);
    let mut start = ((MIN_PERIODS / span) / df).ceil().max(1.0) as usize;
    while start + 1 < mag.len() && mag[start + 1] <= mag[start] {
        start += 1;
    }
    let (k, peak) = mag[start..]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i + start, *v))
        .unwrap_or((0, 0.0));

    let mut sorted = mag[1..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[sorted.len() / 2];
    let ratio = if peak > 0.0 && floor > 0.0 { peak / floor } else { 0.0 };
    if k == 0 || k + 1 >= mag.len() || ratio < MIN_PEAK_TO_FLOOR {
        return Err(Error::NoOscillation { ratio });
    }

    let (a, b, c) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
    let denom = a - 2.0 * b + c;
    let offset = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    let freq = (k as f64 + offset.clamp(-0.5, 0.5)) / (padded as f64 * dt);
    if freq * span < MIN_PERIODS {
        return Err(Error::InvalidInput(format!(
            "window of {span:e} s holds fewer than {MIN_PERIODS} periods at {freq:e} Hz"
        )));
    }
    Ok(freq)
}

fn resample_uniform(t: &[f64], y: &[f64], dt: f64) -> Vec<f64> {
    let uniform = t
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-6 * dt);
    if uniform {
        return y.to_vec();
    }
    let mut j = 0;
    (0..t.len())
        .map(|i| {
            let ti = t[0] + i as f64 * dt;
            while j + 2 < t.len() && t[j + 1] < ti {
                j += 1;
            }
            let f = ((ti - t[j]) / (t[j + 1] - t[j])).clamp(0.0, 1.0);
            y[j] + f * (y[j + 1] - y[j])
        })
        .collect()
}
