//! Mean-field maser burst with the reference parameters, its Rabi ripples
//! and a CSV dump.

use zfmaser::maser::{simulate_maser, MaserState, MaserSystemParams};
use zfmaser::ode::Tolerances;
use zfmaser::rabi::extract_rabi_frequency;
use zfmaser::units::{TimeTrace, Unit};

fn main() -> zfmaser::Result<()> {
    let p = MaserSystemParams::reference();
    println!("cooperativity C = {:.1}", p.cooperativity()?);

    let init = MaserState::initial(p.n_bar, 0.52);
    let traj = simulate_maser(&p, &init, (0.0, 10e-6), Tolerances::default(), None)?;
    let (i, peak) = traj.peak().expect("non-empty trajectory");
    println!(
        "peak {peak:.3e} photons at {:.2} μs ({} steps, {} rejected)",
        traj.t[i] * 1e6,
        traj.stats.accepted,
        traj.stats.rejected
    );

    let photons = TimeTrace::new(traj.t.clone(), traj.photon_numbers(), Unit::Photons)?;
    let f = extract_rabi_frequency(&photons, (1e-6, 8e-6))?;
    println!("Rabi ripple frequency {:.2} MHz", f * 1e-6);

    let last = traj.states.last().expect("non-empty trajectory");
    println!("inversion left after 10 μs: {:.4}", last.inversion);

    let path = std::env::temp_dir().join("maser_burst.csv");
    photons.write_csv(std::fs::File::create(&path)?)?;
    println!("photon trace written to {}", path.display());
    Ok(())
}
