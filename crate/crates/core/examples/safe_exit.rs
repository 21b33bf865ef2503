//! Perturbs the Earth-Moon halo along ± its unstable direction at a
//! few knots and classifies how each state leaves without control.
//!
//! cargo run --release --example safe_exit

use std::path::Path;

use halokeep::halo::{build_reference_orbit, load_initial_guess};
use halokeep::integrator::Tolerances;
use halokeep::safety::{classify_exit, SafeSide};
use halokeep::system::SystemParams;

fn main() -> halokeep::Result<()> {
    let params = SystemParams::earth_moon();
    let guess = load_initial_guess(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/earth_moon_l2_halo.txt"))?;
    let (_, orbit) = build_reference_orbit(&guess, &params, 1e-10, Tolerances::default())?;
    let boundary = 5.0 * orbit.max_amplitude();
    let impact = params.secondary_radius();
    for k in (0..orbit.segments()).step_by(8) {
        for eps in [1e-6, -1e-6] {
            let x = orbit.knot(k) + orbit.manifold_direction(k) * eps;
            let c = classify_exit(&x, &orbit, 3.0, boundary, SafeSide::PositiveX, impact);
            println!(
                "knot {k:2} eps {eps:+.0e}: {:18} after {:.2} periods, closest approach {:.0} km",
                c.verdict.label(),
                c.time / orbit.period,
                c.closest_secondary * params.length_unit_km
            );
        }
    }
    Ok(())
}
