//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::f64::consts::TAU;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use zfmaser::cavity::{coupling_from_qcircle, loaded_q, power_to_photons, thermal_photons, unloaded_q, QCircleGeometry};
use zfmaser::fit::exp::fit_biexponential;
use zfmaser::fit::maser_fit::{fit_maser_parameters, MaserFitOptions, MaserFixed};
use zfmaser::maser::{cooperativity, simulate_maser, MaserState, MaserSystemParams};
use zfmaser::ode::Tolerances;
use zfmaser::rabi::extract_rabi_frequency;
use zfmaser::spectro::{rates_from_lifetimes, svd_global_analysis, SpectrumMatrix, DEFAULT_SIGNIFICANCE};
use zfmaser::synth::{gen_synthetic, BiexpTreprParams, Rank2TasParams, SynthData, SynthParams};
use zfmaser::triplet::{combined_rate_from_eigen, BiexpFit};
use zfmaser::units::{dbm_to_watts, linspace, TimeTrace, Unit};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

/// Runs `f`, timing only the calls it reports through the stopwatch.
struct Stopwatch(Duration);

impl Stopwatch {
    fn time<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0 += start.elapsed();
        out
    }
}

fn c1(sw: &mut Stopwatch) -> Outcome {
    let c = sw
        .time(|| cooperativity(TAU * 2.3e6, TAU * 1478e6 / 3690.0, TAU * 0.29e6))
        .map_err(|e| e.to_string())?;
    check((c - 182.0).abs() <= 1.0, format!("C = {c:.3}"))
}

fn c2(sw: &mut Stopwatch) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for f in linspace(1474e6, 1478e6, 41) {
        let n = sw.time(|| thermal_photons(f, 290.0)).map_err(|e| e.to_string())?;
        worst = worst.max(rel(n, 4097.0));
        range = (range.0.min(n), range.1.max(n));
    }
    sw.0 /= 41;
    check(
        worst <= 5e-3,
        format!("n̄ in [{:.1}, {:.1}], worst deviation {:.3}%", range.0, range.1, 100.0 * worst),
    )
}

fn c3(sw: &mut Stopwatch) -> Outcome {
    let (ql, k, qu) = sw.time(|| {
        (
            loaded_q(1.476e9, 1.4758e9, 1.4762e9),
            coupling_from_qcircle(&QCircleGeometry::lossy(0.16, 1.81)),
            unloaded_q(3690.0, 0.20, 0.0),
        )
    });
    let (ql, k, qu) = (
        ql.map_err(|e| e.to_string())?,
        k.map_err(|e| e.to_string())?,
        qu.map_err(|e| e.to_string())?,
    );
    check(
        (ql - 3690.0).abs() < 0.5 && (k - 0.1975).abs() <= 1e-3 && (qu - 4428.0).abs() <= 1.0,
        format!("Q_L = {ql:.2}, K = {k:.4}, Q_u = {qu:.2}"),
    )
}

fn c4(sw: &mut Stopwatch) -> Outcome {
    let d = sw
        .time(|| combined_rate_from_eigen(-3.93e5, -0.459e5))
        .map_err(|e| e.to_string())?;
    check(
        rel(d.rate, 2.19e5) <= 0.01 && rel(d.decay_time, 4.56e-6) <= 0.01,
        format!("rate = {:.4e} s⁻¹, decay time = {:.3} μs", d.rate, d.decay_time * 1e6),
    )
}

fn c5(sw: &mut Stopwatch) -> Outcome {
    let r = sw.time(|| rates_from_lifetimes(0.46, 0.685)).map_err(|e| e.to_string())?;
    check(
        (r.theta_t - 0.67).abs() <= 0.01 && (r.kappa_ic_plus_rad - 0.714).abs() <= 0.01,
        format!("θ_T = {:.4}, κ_IC+κ_rad = {:.4} ns⁻¹", r.theta_t, r.kappa_ic_plus_rad),
    )
}

fn c6(sw: &mut Stopwatch) -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 24,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let worst = std::cell::Cell::new(0.0f64);
    let strategy = (0.3e6f64..5e6, 12.0f64..15.0, 0.05f64..0.95, 0.0f64..1e4, -2e6f64..2e6);
    let result = sw.time(|| {
        runner.run(&strategy, |(g_hz, log_n, sz, n_bar, delta)| {
            let p = MaserSystemParams {
                g_e: TAU * g_hz,
                kappa_c: 0.0,
                kappa_s: 0.0,
                gamma: 0.0,
                delta,
                n_spins: 10f64.powf(log_n),
                n_bar,
            };
            let init = MaserState::initial(n_bar, sz);
            let traj = simulate_maser(&p, &init, (0.0, 10e-6), Tolerances::default(), None)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let e0 = init.excitation(p.n_spins);
            let dev = traj
                .states
                .iter()
                .map(|s| rel(s.excitation(p.n_spins), e0))
                .fold(0.0, f64::max);
            worst.set(worst.get().max(dev));
            prop_assert!(dev <= 1e-6, "relative drift {dev:e}");
            Ok(())
        })
    });
    check(
        result.is_ok(),
        format!(
            "24 random lossless systems, worst relative drift {:.2e}{}",
            worst.get(),
            result.err().map(|e| format!(": {e}")).unwrap_or_default()
        ),
    )
}

fn c7(sw: &mut Stopwatch) -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 24,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let worst = std::cell::Cell::new(0.0f64);
    let strategy = (
        (1e5f64..1e7, 1e5f64..1e7, 1e5f64..1e6),
        (0.0f64..1e4, 10.0f64..15.0, 0.0f64..20.0),
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.0f64..1.0),
    );
    let result = sw.time(|| {
        runner.run(&strategy, |((kc, ks, gamma), (n_bar, log_n, boost), (sz, xr, xi, q))| {
            let n = 10f64.powf(log_n);
            let p = MaserSystemParams {
                g_e: 0.0,
                kappa_c: kc,
                kappa_s: ks,
                gamma,
                delta: 0.0,
                n_spins: n,
                n_bar,
            };
            let init = MaserState {
                photon_number: n_bar * (1.0 + boost) + 1.0,
                coherence: Complex64::new(xr, xi) * 1e-3 * n,
                inversion: sz,
                spin_correlation: q * n,
            };
            // slowest relaxation among the field, the coherence and the spins
            let slowest = kc.min(gamma).min(0.5 * (kc + gamma + ks));
            let t_end = 20.0 / slowest;
            let traj = simulate_maser(&p, &init, (0.0, t_end), Tolerances::default(), Some(&[0.0, t_end]))
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let s = traj.states[1];
            let photon_dev = (s.photon_number - n_bar).abs() / n_bar.max(1.0);
            let dev = photon_dev
                .max(s.coherence.norm() / n)
                .max(s.inversion.abs())
                .max(s.spin_correlation.abs() / n);
            worst.set(worst.get().max(dev));
            prop_assert!(dev <= 1e-6, "distance from the fixed point {dev:e}");
            Ok(())
        })
    });
    check(
        result.is_ok(),
        format!(
            "24 random uncoupled systems, worst distance {:.2e}{}",
            worst.get(),
            result.err().map(|e| format!(": {e}")).unwrap_or_default()
        ),
    )
}

fn c8(sw: &mut Stopwatch) -> Outcome {
    let truth = MaserSystemParams::reference();
    let t = linspace(0.0, 10e-6, 401);
    let init = MaserState::initial(truth.n_bar, 0.52);
    let traj = simulate_maser(&truth, &init, (0.0, 10e-6), Tolerances::default(), Some(&t)).map_err(|e| e.to_string())?;
    let data = TimeTrace::new(t, traj.photon_numbers(), Unit::Photons).map_err(|e| e.to_string())?;
    let fixed = MaserFixed::reference();
    let mut worst: f64 = 0.0;
    for corner in 0..8u32 {
        let s = |bit: u32| if corner >> bit & 1 == 1 { 1.3 } else { 0.7 };
        let start = (truth.g_e * s(0), truth.kappa_s * s(1), truth.n_spins * s(2));
        let fit = sw
            .time(|| fit_maser_parameters(&data, &fixed, start, &MaserFitOptions::default()))
            .map_err(|e| format!("corner {corner}: {e}"))?;
        let dev = rel(fit.g_e, truth.g_e)
            .max(rel(fit.kappa_s, truth.kappa_s))
            .max(rel(fit.n_spins, truth.n_spins));
        worst = worst.max(dev);
    }
    check(
        worst <= 0.02,
        format!("8 starts at ±30%, worst parameter error {:.2e}", worst),
    )
}

/// Local maxima whose height exceeds both neighbouring minima by `frac`.
fn resolvable_maxima(y: &[f64], frac: f64) -> usize {
    let mut count = 0;
    for i in 1..y.len() - 1 {
        if !(y[i] > y[i - 1] && y[i] >= y[i + 1]) {
            continue;
        }
        let left = y[..i].iter().rev().take_while(|v| **v <= y[i]).cloned().fold(y[i], f64::min);
        let right = y[i + 1..].iter().take_while(|v| **v <= y[i]).cloned().fold(y[i], f64::min);
        if y[i] - left.max(right) > frac * y[i] {
            count += 1;
        }
    }
    count
}

fn c9(sw: &mut Stopwatch) -> Outcome {
    let p = MaserSystemParams::reference();
    let init = MaserState::initial(p.n_bar, 0.52);
    let traj = sw
        .time(|| simulate_maser(&p, &init, (0.0, 10e-6), Tolerances::default(), None))
        .map_err(|e| e.to_string())?;
    let (i, peak) = traj.peak().ok_or("empty trajectory")?;
    let kappa_c = 2.517e6;
    let reference = power_to_photons(dbm_to_watts(-10.0).unwrap(), 0.20, kappa_c, 1.4745e9).unwrap();
    let ripples = resolvable_maxima(&traj.photon_numbers(), 0.05);
    check(
        peak / reference <= 3.0 && reference / peak <= 3.0 && ripples >= 3,
        format!(
            "peak {peak:.3e} photons at {:.2} μs (reference {reference:.3e}), {ripples} resolvable maxima",
            traj.t[i] * 1e6
        ),
    )
}

fn c10(sw: &mut Stopwatch) -> Outcome {
    let f = 1.6e6;
    let t = linspace(0.0, 10e-6, 2001);
    let burst = TimeTrace::from_fn(&t, Unit::Photons, |t| {
        let envelope = 2.4e14 * (t / 1.5e-6) * (-t / 1.5e-6).exp() * std::f64::consts::E;
        envelope * (1.0 + 0.6 * (-t / 4e-6).exp() * (TAU * f * t).cos()) + 4097.0
    })
    .map_err(|e| e.to_string())?;
    let got = sw
        .time(|| extract_rabi_frequency(&burst, (1e-6, 9e-6)))
        .map_err(|e| e.to_string())?;
    check(rel(got, f) <= 0.02, format!("extracted {:.4} MHz", got * 1e-6))
}

fn c11(sw: &mut Stopwatch) -> Outcome {
    let p = SynthParams::Rank2Tas(Rank2TasParams::default());
    let SynthData::Matrix(m) = gen_synthetic(&p, 2024).map_err(|e| e.to_string())?.data else {
        return Err("rank2-tas did not produce a matrix".into());
    };
    let res = sw
        .time(|| svd_global_analysis(&m, DEFAULT_SIGNIFICANCE))
        .map_err(|e| e.to_string())?;
    let lt = &res.component_lifetimes;
    let lifetimes_ok = res.significant_count == 2 && rel(lt[0], 450.0) <= 0.05 && rel(lt[1], 650.0) <= 0.05;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let a = DMatrix::from_fn(50, 200, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sm = SpectrumMatrix::from_matrix(linspace(1.0, 50.0, 50), linspace(0.0, 199.0, 200), &a)
            .map_err(|e| e.to_string())?;
        let r = sw.time(|| svd_global_analysis(&sm, 0.999)).map_err(|e| e.to_string())?;
        let norm = a.norm();
        for k in 0..=50 {
            let err = (&a - r.reconstruct(k)).norm();
            let expected = r.singular_values[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
            worst = worst.max((err - expected).abs() / norm);
        }
    }
    check(
        lifetimes_ok && worst <= 1e-10,
        format!(
            "{} significant, lifetimes {:?} ps; Eckart–Young worst deviation {:.1e}",
            res.significant_count,
            lt.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
            worst
        ),
    )
}

fn c12(sw: &mut Stopwatch) -> Outcome {
    let truth = BiexpFit::new(0.547, -0.066, -3.93e5, -0.459e5);
    let start = BiexpFit::new(0.45, -0.1, -3.0e5, -0.6e5);
    let dev = |f: &BiexpFit| {
        rel(f.a, truth.a)
            .max(rel(f.b, truth.b))
            .max(rel(f.alpha_minus, truth.alpha_minus))
            .max(rel(f.alpha_plus, truth.alpha_plus))
    };
    let trace = |noise: f64, seed: u64| -> Result<TimeTrace, String> {
        let p = SynthParams::BiexpTrepr(BiexpTreprParams {
            noise,
            ..Default::default()
        });
        match gen_synthetic(&p, seed).map_err(|e| e.to_string())?.data {
            SynthData::Trace(t) => Ok(t),
            SynthData::Matrix(_) => Err("biexp-trepr did not produce a trace".into()),
        }
    };
    let clean = trace(0.0, 0)?;
    let exact = sw.time(|| fit_biexponential(&clean, &start)).map_err(|e| e.to_string())?;
    let clean_dev = dev(&exact.fit);
    let mut noisy_dev: f64 = 0.0;
    for seed in 0..5 {
        let noisy = trace(0.01, seed)?;
        let out = sw.time(|| fit_biexponential(&noisy, &start)).map_err(|e| e.to_string())?;
        noisy_dev = noisy_dev.max(dev(&out.fit));
    }
    check(
        clean_dev <= 1e-6 && noisy_dev <= 0.05,
        format!("noiseless error {clean_dev:.1e}, 1% noise worst error {:.2}%", 100.0 * noisy_dev),
    )
}

fn main() {
    type Criterion = (u32, &'static str, Duration, fn(&mut Stopwatch) -> Outcome);
    let ms = Duration::from_millis;
    let criteria: [Criterion; 12] = [
        (1, "cooperativity", ms(1), c1),
        (2, "thermal photons", ms(1), c2),
        (3, "cavity chain", ms(1), c3),
        (4, "combined trEPR decay", ms(1), c4),
        (5, "photophysics", ms(1), c5),
        (6, "cQED conservation", ms(5_000), c6),
        (7, "cQED fixed point", ms(1_000), c7),
        (8, "maser fit round-trip", ms(300_000), c8),
        (9, "simulated burst magnitude", ms(5_000), c9),
        (10, "Rabi extraction", ms(1_000), c10),
        (11, "SVD oracle", ms(5_000), c11),
        (12, "biexponential round-trip", ms(5_000), c12),
    ];
    let mut failed = 0;
    let mut out = std::io::stdout().lock();
    for (id, name, budget, f) in criteria {
        let mut sw = Stopwatch(Duration::ZERO);
        let outcome = f(&mut sw);
        let elapsed = sw.0;
        let in_time = elapsed <= budget;
        let (status, detail) = match (&outcome, in_time) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; over the {budget:?} budget")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        writeln!(out, "criterion {id:>2} {status} {name}: {detail} [{elapsed:.3?}]").unwrap();
    }
    writeln!(out, "acceptance: {} of 12 criteria passed", 12 - failed).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
