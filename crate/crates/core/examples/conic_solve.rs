//! Builds a small second-order cone program by hand, solves it and checks
//! the certificate.
//!
//! cargo run --release --example conic_solve
//!
//! minimise x + y subject to ‖(x, y)‖ ≤ 1 and x ≥ -0.9; the optimum sits on
//! the circle where the bound on x is not active, at (-1/√2, -1/√2).

use halokeep::conic::{kkt_residuals, solve, Cone, ConicProgram, SolverSettings, SparseMatrix};

fn main() -> halokeep::Result<()> {
    // Rows: s = h - G z. Nonnegative row: -x + s = 0.9. Cone rows: (1, x, y).
    let g = SparseMatrix::from_triplets(4, 2, vec![(0, 0, -1.0), (2, 0, -1.0), (3, 1, -1.0)])?;
    let program = ConicProgram::new(
        vec![1.0, 1.0],
        g,
        vec![0.9, 1.0, 0.0, 0.0],
        vec![Cone::Nonnegative(1), Cone::SecondOrder(3)],
    )?;
    let sol = solve(&program, SolverSettings::default())?;
    println!("status     {}", sol.status.label());
    println!("z          {:?}", sol.z);
    println!("objective  {:.12} (exact {:.12})", sol.objective, -std::f64::consts::SQRT_2);
    println!("iterations {}", sol.iterations);
    let r = kkt_residuals(&program, &sol.z, &sol.s, &sol.y);
    println!("residuals  {r:?}");
    println!("\n{}", program.to_text());
    Ok(())
}
