//! Compares the exact Jacobians of the RK4 step with state transition
//! matrices from the adaptive integrator, knot by knot.
//!
//! cargo run --release --example linearize

use std::path::Path;

use halokeep::halo::{build_reference_orbit, load_initial_guess, segment_stm};
use halokeep::integrator::Tolerances;
use halokeep::linearize::discrete_jacobians;
use halokeep::system::SystemParams;

fn main() -> halokeep::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    for (file, params) in [
        ("earth_moon_l2_halo.txt", SystemParams::earth_moon()),
        ("saturn_enceladus_l2_halo.txt", SystemParams::saturn_enceladus()),
    ] {
        let tol = Tolerances::new(1e-13, 1e-13)?;
        let (_, orbit) = build_reference_orbit(&load_initial_guess(&data.join(file))?, &params, 1e-10, tol)?;
        let model = discrete_jacobians(&orbit)?;
        let mut worst = 0.0f64;
        let mut offset = 0.0f64;
        for k in 0..model.segments() {
            let stm = segment_stm(&orbit, k, tol)?;
            let (a, _) = model.at(k);
            worst = worst.max((a - stm).abs().max() / stm.abs().max());
            offset = offset.max(model.offset(k).norm());
        }
        println!(
            "{:18} {} segments  max |A_k - STM| / |STM| = {:.2e}  max RK4 defect = {:.2e} LU",
            params.name,
            model.segments(),
            worst,
            offset
        );
    }
    Ok(())
}
