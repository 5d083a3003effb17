//! From a reflection sweep to the cavity numbers the maser model needs.

use std::f64::consts::TAU;

use num_complex::Complex64;
use zfmaser::cavity::{
    cavity_decay_rate, coupling_from_qcircle, fit_circle, loaded_q, power_to_photons, thermal_photons,
    unloaded_q, QCircleGeometry,
};
use zfmaser::units::{dbm_to_watts, linspace};

fn main() -> zfmaser::Result<()> {
    let (f0, q_l, k) = (1.476e9, 3690.0, 0.2);

    // synthetic S11 of an undercoupled one-port resonator
    let sweep: Vec<Complex64> = linspace(f0 - 2e6, f0 + 2e6, 81)
        .into_iter()
        .map(|f| {
            let x = Complex64::new(0.0, 2.0 * q_l * (f - f0) / f0);
            (Complex64::from(k - 1.0) - x) / (Complex64::from(k + 1.0) + x)
        })
        .collect();
    let circle = fit_circle(&sweep)?;
    let k_fit = coupling_from_qcircle(&QCircleGeometry::lossless(circle.diameter()))?;
    println!("Q-circle diameter {:.4} -> K = {k_fit:.4}", circle.diameter());

    let k_lossy = coupling_from_qcircle(&QCircleGeometry::lossy(0.16, 1.81))?;
    println!("lossy loop, d = 0.16, d2 = 1.81 -> K = {k_lossy:.4}");

    let ql = loaded_q(f0, 1.4758e9, 1.4762e9)?;
    let qu = unloaded_q(ql, k_lossy, 0.0)?;
    let kappa_c = cavity_decay_rate(1478e6, ql)?;
    println!("Q_L = {ql:.0}, Q_u = {qu:.0}, κ_c = {kappa_c:.4e} s⁻¹ (= 2π × {:.1} kHz)", kappa_c / TAU * 1e-3);

    let n_bar = thermal_photons(1.4745e9, 290.0)?;
    println!("thermal photons at 290 K: {n_bar:.0}");

    let peak = power_to_photons(dbm_to_watts(-10.0)?, k, 2.517e6, 1.4745e9)?;
    println!("-10 dBm detected -> {peak:.3e} intracavity photons");
    Ok(())
}
