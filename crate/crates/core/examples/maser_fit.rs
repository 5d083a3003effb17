//! Recover g_e, κ_s and N from a noisy synthetic burst.

use std::f64::consts::TAU;

use zfmaser::fit::maser_fit::{fit_maser_parameters, MaserFitOptions, MaserFixed};
use zfmaser::synth::{gen_synthetic, MaserBurstParams, SynthData, SynthParams};

fn main() -> zfmaser::Result<()> {
    let params = MaserBurstParams {
        noise: 0.02,
        ..Default::default()
    };
    let truth = params.system;
    let SynthData::Trace(trace) = gen_synthetic(&SynthParams::MaserBurst(params), 1)?.data else {
        unreachable!("maser bursts are traces")
    };

    // start 25% away from the truth in every parameter
    let start = (truth.g_e * 1.25, truth.kappa_s * 0.75, truth.n_spins * 1.25);
    let t0 = std::time::Instant::now();
    let fit = fit_maser_parameters(&trace, &MaserFixed::reference(), start, &MaserFitOptions::default())?;
    println!("fit took {:.2?}, {} model evaluations", t0.elapsed(), fit.result.evaluations);

    println!("g_e = 2π × {:.4} MHz ± {:.1e}  (true {:.4})", fit.g_e / TAU * 1e-6, fit.uncertainties[0] / TAU * 1e-6, truth.g_e / TAU * 1e-6);
    println!("κ_s = 2π × {:.4} MHz ± {:.1e}  (true {:.4})", fit.kappa_s / TAU * 1e-6, fit.uncertainties[1] / TAU * 1e-6, truth.kappa_s / TAU * 1e-6);
    println!("N   = {:.4e} ± {:.1e}  (true {:.4e})", fit.n_spins, fit.uncertainties[2], truth.n_spins);
    println!("C   = {:.1}", fit.cooperativity);
    Ok(())
}
