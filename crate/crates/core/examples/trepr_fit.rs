//! Biexponential fit of a noisy zero-field trEPR transient.

use zfmaser::fit::exp::fit_biexponential;
use zfmaser::synth::{gen_synthetic, SynthData, SynthParams, SynthKind};
use zfmaser::triplet::{combined_rate_from_eigen, BiexpFit};

fn main() -> zfmaser::Result<()> {
    let SynthData::Trace(trace) = gen_synthetic(&SynthParams::default_for(SynthKind::BiexpTrepr), 3)?.data else {
        unreachable!("trEPR data are traces")
    };
    let out = fit_biexponential(&trace, &BiexpFit::new(0.4, -0.1, -2.5e5, -0.8e5))?;
    let f = out.fit;
    let u = f.uncertainties.unwrap_or([f64::NAN; 4]);
    println!("A  = {:.4} ± {:.4}", f.a, u[0]);
    println!("B  = {:.4} ± {:.4}", f.b, u[1]);
    println!("α₋ = {:.4e} ± {:.1e} s⁻¹", f.alpha_minus, u[2]);
    println!("α₊ = {:.4e} ± {:.1e} s⁻¹", f.alpha_plus, u[3]);
    println!("residual norm {:.3e} after {} iterations", out.result.residual_norm, out.result.iterations);

    let d = combined_rate_from_eigen(f.alpha_minus, f.alpha_plus)?;
    println!("w_xz + (k_x + k_z)/2 = {:.3e} s⁻¹, decay time {:.2} μs", d.rate, d.decay_time * 1e6);
    if let Some(t) = f.sign_change_time() {
        println!("signal changes sign at {:.2} μs", t * 1e6);
    }
    Ok(())
}
