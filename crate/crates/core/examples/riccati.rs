//! Periodic cost-to-go for the Earth-Moon halo: the doubling scheme against
//! the plain backward recursion, and the resulting ellipsoid shapes.
//!
//! cargo run --release --example riccati

use std::path::Path;
use std::time::Instant;

use halokeep::halo::{build_reference_orbit, load_initial_guess};
use halokeep::integrator::Tolerances;
use halokeep::linearize::discrete_jacobians;
use halokeep::riccati::{ellipsoid_shape, periodic_riccati, periodic_riccati_sweeps, CostWeights};
use halokeep::system::SystemParams;

fn main() -> halokeep::Result<()> {
    let params = SystemParams::earth_moon();
    let guess = load_initial_guess(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/earth_moon_l2_halo.txt"))?;
    let (_, orbit) = build_reference_orbit(&guess, &params, 1e-10, Tolerances::default())?;
    let model = discrete_jacobians(&orbit)?;
    let w = CostWeights::isotropic(1e-3, 1e3);

    let t = Instant::now();
    let fast = periodic_riccati(&model, &w, 1e-8, 500)?;
    println!(
        "doubling: {} passes ({} equivalent periods) in {:.3} s, last change {:.1e}",
        fast.periods,
        fast.equivalent_periods,
        t.elapsed().as_secs_f64(),
        fast.final_change
    );
    let t = Instant::now();
    match periodic_riccati_sweeps(&model, &w, 1e-8, 2000) {
        Ok(slow) => {
            let diff = (0..model.segments())
                .map(|k| (slow.at(k) - fast.at(k)).norm() / fast.at(k).norm())
                .fold(0.0, f64::max);
            println!(
                "sweeps:   {} periods in {:.3} s, max relative difference {diff:.1e}",
                slow.periods,
                t.elapsed().as_secs_f64()
            );
        }
        Err(e) => println!("sweeps:   {e}"),
    }

    let shapes = ellipsoid_shape(&fast)?;
    for k in (0..model.segments()).step_by(10) {
        let eig = fast.at(k).symmetric_eigenvalues();
        println!(
            "knot {k:2}: eigenvalues of P in [{:.3e}, {:.3e}], |L| = {:.3e}",
            eig.min(),
            eig.max(),
            shapes[k].norm()
        );
    }
    Ok(())
}
