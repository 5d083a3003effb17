//! Fluorescence tail fit followed by the triplet-yield arithmetic.

use zfmaser::spectro::{fit_tcspc, rates_from_lifetimes};
use zfmaser::synth::{gen_synthetic, SynthData, SynthKind, SynthParams};

fn main() -> zfmaser::Result<()> {
    let SynthData::Trace(decay) = gen_synthetic(&SynthParams::default_for(SynthKind::Tcspc), 8)?.data else {
        unreachable!("TCSPC data are traces")
    };
    for n in 1..=3 {
        let fit = fit_tcspc(&decay, n)?;
        let parts: Vec<String> = fit
            .lifetimes
            .iter()
            .zip(&fit.amplitudes)
            .map(|(tau, a)| format!("{:.3} ns (A = {a:.3})", tau * 1e9))
            .collect();
        let flag = if fit.converged { "" } else { "  [not supported by the data]" };
        println!("{n} component(s): {}{flag}", parts.join(", "));
    }

    // fast fluorescence component and the ISC lifetime from global analysis
    let rates = rates_from_lifetimes(0.46, 0.685)?;
    println!(
        "κ_f = {:.3} ns⁻¹, κ_ISC = {:.3} ns⁻¹, κ_IC + κ_rad = {:.3} ns⁻¹, θ_T = {:.2}",
        rates.kappa_f, rates.kappa_isc, rates.kappa_ic_plus_rad, rates.theta_t
    );
    Ok(())
}
