//! Solves one receding-horizon plan from an injection error and prints the
//! burn schedule.
//!
//! cargo run --release --example single_plan

use std::path::PathBuf;

use halokeep::controller::inject_error;
use halokeep::scenario::Scenario;
use halokeep::stationkeeping::{plan, StationkeepingProblem};

fn main() -> halokeep::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/earth_moon_ball.toml");
    let scenario = Scenario::load(&path)?;
    let prepared = scenario.prepare()?;
    let orbit = &prepared.orbit;
    let x0 = inject_error(orbit.knot(0), &scenario.mission.injection, &prepared.params);
    let problem = StationkeepingProblem {
        orbit,
        model: &prepared.model,
        shape: prepared.shape.as_deref(),
        phase: 1,
        initial_error: x0 - orbit.knot(0),
        horizon: 2 * orbit.segments(),
        constraints: scenario.constraints.nondimensional(&prepared.params),
    };
    let p = plan(&problem, scenario.solver)?;
    println!("status {}  iterations {}  residual {:.1e}", p.status.label(), p.iterations, p.residuals.max());
    println!("planned delta-v {:.6} m/s over {} steps", p.total_delta_v, problem.horizon);
    for (k, dv) in p.delta_v.iter().enumerate().filter(|(_, dv)| **dv > 1e-6) {
        println!("  step {k:3}  {dv:.6} m/s");
    }
    println!("constraint violation of the plan {:.2e}", problem.constraint_violation(&p));
    Ok(())
}
