//! Sublevel populations of the photoexcited triplet and the trEPR signal
//! they imply.

use zfmaser::triplet::{combined_rate_from_eigen, eigenrates, evolve_populations, TripletRateModel};
use zfmaser::units::linspace;

fn main() -> zfmaser::Result<()> {
    // depopulation of T_x, T_z and their spin-lattice exchange, s⁻¹
    let model = TripletRateModel::with_default_populations(3.6e5, 0.35e5, 0.24e5)?;
    let (am, ap) = eigenrates(&model);
    println!("eigenrates: α₋ = {am:.4e} s⁻¹, α₊ = {ap:.4e} s⁻¹");

    let decay = combined_rate_from_eigen(am, ap)?;
    println!("combined rate {:.4e} s⁻¹, decay time {:.2} μs", decay.rate, decay.decay_time * 1e6);

    let signal = model.difference_biexp();
    println!(
        "N_x − N_z = {:.4} e^(α₋t) {:+.4} e^(α₊t)",
        signal.a, signal.b
    );
    if let Some(t) = signal.sign_change_time() {
        println!("inversion lost after {:.2} μs", t * 1e6);
    }

    println!("\n t (μs)     N_x       N_z");
    for s in evolve_populations(&model, &linspace(0.0, 20e-6, 11))? {
        println!("{:6.1}  {:8.5}  {:8.5}", s.t * 1e6, s.n_x, s.n_z);
    }
    Ok(())
}
