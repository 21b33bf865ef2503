//! Corrects the shipped halo initial conditions and prints a short report.
//!
//! cargo run --release --example gen_orbit

use std::path::Path;

use halokeep::halo::{build_reference_orbit, load_initial_guess};
use halokeep::integrator::Tolerances;
use halokeep::system::SystemParams;

fn main() -> halokeep::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    for (file, params) in [
        ("earth_moon_l2_halo.txt", SystemParams::earth_moon()),
        ("saturn_enceladus_l2_halo.txt", SystemParams::saturn_enceladus()),
    ] {
        let guess = load_initial_guess(&data.join(file))?;
        let (corrected, orbit) = build_reference_orbit(&guess, &params, 1e-10, Tolerances::default())?;
        println!("{}", params.name);
        println!("  x0          = {:?}", corrected.state.as_slice());
        println!("  iterations  = {}", corrected.iterations);
        println!("  closure     = {:.3e}", corrected.closure);
        println!(
            "  period      = {:.6} TU = {:.4} days = {:.4} hours",
            orbit.period,
            params.time_to_days(orbit.period),
            params.time_to_hours(orbit.period)
        );
        println!("  dt          = {:.4} hours = {:.3} minutes", params.time_to_hours(orbit.dt), params.time_to_hours(orbit.dt) * 60.0);
        println!("  det M       = {:.12}", orbit.monodromy.determinant());
        println!("  lambda_u    = {:.6}", orbit.unstable_eigenvalue);
        println!("  v_u         = {:?}", orbit.unstable_direction.as_slice());
        for z in &orbit.eigenvalues {
            println!("    eig {:+.9e} {:+.9e}i", z.re, z.im);
        }
        println!("  max amplitude about L2 = {:.6} LU ({:.0} km)", orbit.max_amplitude(), orbit.max_amplitude() * params.length_unit_km);
        println!("  knot closure = {:.3e}", orbit.closure());
    }
    Ok(())
}
