//! Seeds both branches of the unstable manifold along the Earth-Moon halo
//! and reports where each trajectory leaves the neighbourhood of L2.
//!
//! cargo run --release --example manifolds

use std::path::Path;

use halokeep::halo::{build_reference_orbit, first_sphere_exit, load_initial_guess, manifold_trajectories, Branch};
use halokeep::integrator::Tolerances;
use halokeep::system::SystemParams;

fn main() -> halokeep::Result<()> {
    let params = SystemParams::earth_moon();
    let guess = load_initial_guess(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/earth_moon_l2_halo.txt"))?;
    let tol = Tolerances::default();
    let (_, orbit) = build_reference_orbit(&guess, &params, 1e-10, tol)?;
    let radius = 5.0 * orbit.max_amplitude();
    let tau = 3.0 * orbit.period;

    for branch in [Branch::Positive, Branch::Negative] {
        let mut sides = [0usize; 3];
        for m in manifold_trajectories(&orbit, 1e-6, branch, tau, 4, tol)? {
            let (exit, _) = first_sphere_exit(&m.initial_state, &params, &orbit.libration_point, radius, tau, tol)?;
            match exit {
                Some(e) if e.departs_positive_x(&orbit.libration_point) => sides[0] += 1,
                Some(_) => sides[1] += 1,
                None => sides[2] += 1,
            }
        }
        println!(
            "{:8} branch: {} leave on +x, {} on -x, {} still bounded after 3 periods",
            branch.label(),
            sides[0],
            sides[1],
            sides[2]
        );
    }
    Ok(())
}
