//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Missions are flown from the shipped scenario
//! files, so this target takes a minute or two even when optimised.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use halokeep::conic::{solve, Cone, ConicProgram, SolveStatus, SolverSettings, SparseMatrix};
use halokeep::controller::MissionLog;
use halokeep::dynamics::{
    flow_with_stm, jacobi_constant, propagate, propagate_to, step_discrete, Control, Mat6, State,
};
use halokeep::halo::segment_stm;
use halokeep::integrator::Tolerances;
use halokeep::linearize::{discrete_jacobians, LinearizedModel};
use halokeep::riccati::{periodic_riccati, CostWeights};
use halokeep::safety::{verify_mission, SafetyConfig, Verdict};
use halokeep::scenario::{Prepared, Scenario};
use halokeep::stationkeeping::{
    plan, ConstraintConfig, ConstraintUnits, ConstraintVariant, HalfSpaceNormal, StationkeepingProblem,
};
use nalgebra::{DMatrix, DVector, Matrix6x3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = (bool, String);

const SYSTEMS: [&str; 2] = ["earth_moon", "saturn_enceladus"];

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn prepare(name: &str) -> Prepared {
    scenario(name).prepare().unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn dynamics_fidelity() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for sys in SYSTEMS {
        let (params, corrected, _) = scenario(&format!("{sys}_ball")).build_orbit().unwrap();
        let start = Instant::now();
        let traj = propagate(&corrected.state, (0.0, corrected.period), &params, Tolerances::default()).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let c0 = jacobi_constant(&corrected.state, &params).unwrap();
        let drift = traj
            .states
            .iter()
            .map(|x| ((jacobi_constant(x, &params).unwrap() - c0) / c0).abs())
            .fold(0.0, f64::max);
        let closure = (traj.last().unwrap().1 - corrected.state).norm();
        ok &= drift < 1e-10 && closure < 1e-8 && secs < 1.0;
        notes.push(format!("{sys}: jacobi {drift:.1e}, closure {closure:.1e}, {secs:.3} s"));
    }
    (ok, notes.join("; "))
}

fn stm_correctness() -> Outcome {
    let tol = Tolerances::new(1e-13, 1e-13).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for sys in SYSTEMS {
        let (params, corrected, orbit) = scenario(&format!("{sys}_ball")).build_orbit().unwrap();
        let t = corrected.period;
        let (_, m) = flow_with_stm(&corrected.state, (0.0, t), &params, tol).unwrap();
        // Truncation of the difference quotient scales with (h / orbit size)².
        let h = 1e-6 * orbit.max_amplitude();
        let mut fd_err = 0.0f64;
        for j in 0..6 {
            let mut xp = corrected.state;
            let mut xm = corrected.state;
            xp[j] += h;
            xm[j] -= h;
            let col = (propagate_to(&xp, (0.0, t), &params, tol).unwrap()
                - propagate_to(&xm, (0.0, t), &params, tol).unwrap())
                / (2.0 * h);
            fd_err = fd_err.max((col - m.column(j)).norm() / m.column(j).norm());
        }
        let det = (orbit.monodromy.determinant() - 1.0).abs();
        let eig = &orbit.eigenvalues;
        let reciprocal = eig
            .iter()
            .map(|l| {
                let inv = l.inv();
                eig.iter().map(|m| (m - inv).norm() / inv.norm()).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        let lu = orbit.unstable_eigenvalue;
        ok &= fd_err < 1e-5 && det < 1e-6 && reciprocal < 1e-6 && lu > 1.0;
        notes.push(format!(
            "{sys}: fd {fd_err:.1e}, |det-1| {det:.1e}, reciprocity {reciprocal:.1e}, lambda_u {lu:.2}"
        ));
    }
    (ok, notes.join("; "))
}

fn orbit_periods() -> Outcome {
    let (em, em_orbit, _) = scenario("earth_moon_ball").build_orbit().unwrap();
    let (se, se_orbit, _) = scenario("saturn_enceladus_ball").build_orbit().unwrap();
    let days = em.time_to_days(em_orbit.period);
    let hours = se.time_to_hours(se_orbit.period);
    let ok = (days / 14.81 - 1.0).abs() < 5e-3 && (hours / 16.21 - 1.0).abs() < 5e-3;
    (ok, format!("earth-moon {days:.4} days, saturn-enceladus {hours:.4} hours"))
}

fn linearization() -> Outcome {
    let tol = Tolerances::new(1e-13, 1e-13).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for sys in SYSTEMS {
        let (params, _, orbit) = scenario(&format!("{sys}_ball")).build_orbit().unwrap();
        let model = discrete_jacobians(&orbit).unwrap();
        let mut stm_err = 0.0f64;
        let mut fd_err = 0.0f64;
        let h = 1e-6;
        for k in 0..model.segments() {
            let (a, b) = model.at(k);
            stm_err = stm_err.max((a - segment_stm(&orbit, k, tol).unwrap()).amax());
            let x = orbit.knots[k];
            let u = Control::zeros();
            let f = |x: &State, u: &Control| step_discrete(x, u, orbit.dt, &params).unwrap();
            for j in 0..6 {
                let (mut xp, mut xm) = (x, x);
                xp[j] += h;
                xm[j] -= h;
                let col = (f(&xp, &u) - f(&xm, &u)) / (2.0 * h);
                fd_err = fd_err.max((col - a.column(j)).norm() / a.column(j).norm());
            }
            for j in 0..3 {
                let (mut up, mut um) = (u, u);
                up[j] += h;
                um[j] -= h;
                let col = (f(&x, &up) - f(&x, &um)) / (2.0 * h);
                fd_err = fd_err.max((col - b.column(j)).norm() / b.column(j).norm());
            }
        }
        ok &= stm_err < 1e-6 && fd_err < 1e-5;
        notes.push(format!("{sys}: |A_k - STM| {stm_err:.1e}, finite differences {fd_err:.1e}"));
    }
    (ok, notes.join("; "))
}

fn scalar_riccati() -> f64 {
    let (a, b, q, r) = (1.1_f64, 1.0_f64, 1.0_f64, 1.0_f64);
    let bb = r - a * a * r - q * b * b;
    let closed = (-bb + (bb * bb + 4.0 * b * b * q * r).sqrt()) / (2.0 * b * b);
    let mut am = Mat6::identity() * 0.5;
    let mut bm = Matrix6x3::zeros();
    for i in 0..3 {
        am[(i, i)] = a;
        bm[(i, i)] = b;
    }
    let model = LinearizedModel {
        a: vec![am],
        b: vec![bm],
        offsets: vec![State::zeros()],
        dt: 1.0,
    };
    let ctg = periodic_riccati(&model, &CostWeights::isotropic(q, r), 1e-13, 500).unwrap();
    ctg.p.iter().map(|p| (p[(0, 0)] - closed).abs()).fold(0.0, f64::max)
}

fn periodic_lqr() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for sys in SYSTEMS {
        let s = scenario(&format!("{sys}_ellipsoid"));
        let (_, _, orbit) = s.build_orbit().unwrap();
        let model = discrete_jacobians(&orbit).unwrap();
        let w = CostWeights::isotropic(s.weights.q, s.weights.r);
        match periodic_riccati(&model, &w, 1e-8, 500) {
            Ok(ctg) => {
                let min_eig = ctg.p.iter().map(|p| p.symmetric_eigenvalues().min()).fold(f64::INFINITY, f64::min);
                ok &= ctg.periods <= 500 && min_eig > 0.0;
                notes.push(format!(
                    "{sys}: {} passes ({} periods of plain recursion), min eigenvalue {min_eig:.2e}",
                    ctg.periods, ctg.equivalent_periods
                ));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("{sys}: {e}"));
            }
        }
    }
    let scalar = scalar_riccati();
    ok &= scalar < 1e-10;
    notes.push(format!("scalar closed form {scalar:.1e}"));
    (ok, notes.join("; "))
}

/// Minimum of cᵀz over G z ≤ h by enumerating every vertex.
fn vertex_oracle(c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> f64 {
    let (m, n) = g.shape();
    let mut best = f64::INFINITY;
    let mut rows: Vec<usize> = (0..n).collect();
    loop {
        let sub = DMatrix::from_fn(n, n, |i, j| g[(rows[i], j)]);
        let rhs = DVector::from_fn(n, |i, _| h[rows[i]]);
        if let Some(z) = sub.lu().solve(&rhs) {
            if (g * &z - h).max() <= 1e-9 {
                best = best.min(c.dot(&z));
            }
        }
        // next combination of n rows out of m
        let Some(i) = (0..n).rev().find(|&i| rows[i] < m - n + i) else { break };
        rows[i] += 1;
        for j in i + 1..n {
            rows[j] = rows[j - 1] + 1;
        }
    }
    best
}

fn conic_solver() -> Outcome {
    let settings = SolverSettings::default();
    let mut worst_kkt = 0.0f64;
    let mut check = |p: &ConicProgram| {
        let sol = solve(p, settings).unwrap();
        if sol.status == SolveStatus::Optimal {
            worst_kkt = worst_kkt.max(sol.residuals.max());
        }
        sol
    };

    let lp = ConicProgram::new(
        vec![1.0],
        SparseMatrix::from_triplets(1, 1, vec![(0, 0, -1.0)]).unwrap(),
        vec![-1.0],
        vec![Cone::Nonnegative(1)],
    )
    .unwrap();
    let lp_err = (check(&lp).z[0] - 1.0).abs();
    let soc = ConicProgram::new(
        vec![1.0],
        SparseMatrix::from_triplets(3, 1, vec![(0, 0, -1.0)]).unwrap(),
        vec![0.0, 3.0, 4.0],
        vec![Cone::SecondOrder(3)],
    )
    .unwrap();
    let soc_err = (check(&soc).z[0] - 5.0).abs();

    // Random bounded LPs: a box plus random cuts through a neighbourhood of
    // the origin, small enough to enumerate every vertex.
    let mut rng = StdRng::seed_from_u64(7);
    let mut lp_worst = 0.0f64;
    let mut statuses_ok = true;
    for _ in 0..100 {
        let n = rng.random_range(2..=4);
        let cuts = rng.random_range(2..=6);
        let m = 2 * n + cuts;
        let mut g = DMatrix::zeros(m, n);
        let mut h = DVector::zeros(m);
        for i in 0..n {
            g[(2 * i, i)] = 1.0;
            g[(2 * i + 1, i)] = -1.0;
            h[2 * i] = rng.random_range(0.5..2.0);
            h[2 * i + 1] = rng.random_range(0.5..2.0);
        }
        for r in 2 * n..m {
            for j in 0..n {
                g[(r, j)] = rng.random_range(-1.0..1.0);
            }
            h[r] = rng.random_range(0.1..1.0);
        }
        let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let oracle = vertex_oracle(&c, &g, &h);
        let trip = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (i, j, g[(i, j)])).collect();
        let p = ConicProgram::new(
            c.as_slice().to_vec(),
            SparseMatrix::from_triplets(m, n, trip).unwrap(),
            h.as_slice().to_vec(),
            vec![Cone::Nonnegative(m)],
        )
        .unwrap();
        let sol = check(&p);
        statuses_ok &= sol.status == SolveStatus::Optimal;
        lp_worst = lp_worst.max((sol.objective - oracle).abs());
    }
    let ok = lp_err < 1e-8 && soc_err < 1e-8 && statuses_ok && lp_worst < 1e-6 && worst_kkt < 1e-8;
    (
        ok,
        format!(
            "lp {lp_err:.1e}, soc {soc_err:.1e}, 100 random lps max gap {lp_worst:.1e}, worst kkt {worst_kkt:.1e}"
        ),
    )
}

fn ball(r_q: f64, r_v: f64, a: f64, half_space: bool) -> ConstraintConfig {
    ConstraintConfig {
        variant: ConstraintVariant::EuclideanBall,
        units: ConstraintUnits::Nondimensional,
        r_q,
        r_v,
        c: 1.0,
        a,
        half_space,
        normal: HalfSpaceNormal::Manifold,
        free_steps: 0,
    }
}

/// Smallest ‖u‖₁ over a grid that is refined around the best feasible point.
fn grid_oracle(feasible: impl Fn(&Control) -> bool, radius: f64) -> f64 {
    let steps = 40;
    let mut center = Control::zeros();
    let mut half = radius;
    let mut best = f64::INFINITY;
    let mut best_u = center;
    for _ in 0..30 {
        let h = 2.0 * half / steps as f64;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let u = center + Control::new(i as f64, j as f64, k as f64) * h - Control::repeat(half);
                    let cost = u.lp_norm(1);
                    if cost < best && feasible(&u) {
                        best = cost;
                        best_u = u;
                    }
                }
            }
        }
        center = best_u;
        half = 4.0 * h;
    }
    best
}

fn optimizer_sanity() -> Outcome {
    let prepared = prepare("earth_moon_ball");
    let model = prepared.model.without_offsets();
    let problem = |cfg: ConstraintConfig, dx: State, horizon: usize| StationkeepingProblem {
        orbit: &prepared.orbit,
        model: &model,
        shape: None,
        phase: 3,
        initial_error: dx,
        horizon,
        constraints: cfg,
    };
    let settings = SolverSettings::default();
    let idle = plan(&problem(ball(1e-3, 1e-3, 0.0, false), State::zeros(), 80), settings).unwrap();
    let forced = plan(&problem(ball(1e-3, 1e-3, 1e-6, true), State::zeros(), 80), settings).unwrap();

    let dx = State::new(2e-6, -1e-6, 5e-7, 8e-5, -6e-5, 3e-5);
    let (r_q, r_v) = (1e-4, 2e-5);
    let one = plan(&problem(ball(r_q, r_v, 0.0, false), dx, 1), settings).unwrap();
    let (a, b) = model.at(3);
    let free = a * dx;
    let oracle = grid_oracle(
        |u| {
            let x = free + b * u;
            x.fixed_rows::<3>(0).norm() <= r_q && x.fixed_rows::<3>(3).norm() <= r_v
        },
        2.0 * free.fixed_rows::<3>(3).norm() / b[(3, 0)],
    );
    let planned = one.controls[0].lp_norm(1);
    let grid_err = (planned - oracle).abs() / oracle;
    let ok = idle.is_valid()
        && idle.total_delta_v < 1e-9
        && forced.is_valid()
        && forced.total_delta_v > 0.0
        && one.is_valid()
        && grid_err < 1e-4;
    (
        ok,
        format!(
            "idle {:.1e} m/s, half-space {:.3e} m/s, one-step |u|_1 {planned:.6e} vs grid {oracle:.6e} (rel {grid_err:.1e})",
            idle.total_delta_v, forced.total_delta_v
        ),
    )
}

struct Flown {
    prepared: Prepared,
    scenario: Scenario,
    log: MissionLog,
    seconds: f64,
}

fn fly(name: &str, half_space: bool) -> Flown {
    let mut scenario = scenario(name);
    scenario.constraints.half_space = half_space;
    let prepared = scenario.prepare().unwrap();
    let start = Instant::now();
    let log = prepared.run(&scenario.mission_config()).unwrap();
    Flown {
        seconds: start.elapsed().as_secs_f64(),
        prepared,
        scenario,
        log,
    }
}

impl Flown {
    fn total(&self) -> f64 {
        self.log.total_delta_v()
    }

    fn steady(&self) -> f64 {
        self.log.delta_v_between(2, 100)
    }

    fn quiet(&self) -> f64 {
        self.log.quiet_fraction(3, 1e-9)
    }

    fn safety(&self) -> (f64, f64) {
        let cfg: SafetyConfig = self.scenario.safety.clone().expect("ball scenarios carry a safety block");
        let start = Instant::now();
        let report = verify_mission(&self.log, &self.prepared.orbit, &cfg).unwrap();
        let n = report.in_window().count() as f64;
        (report.count(Verdict::EscapeIntended) as f64 / n, start.elapsed().as_secs_f64())
    }

    fn describe(&self) -> String {
        format!(
            "total {:.3} m/s, revs 2-100 {:.4} m/s, {:.1} s",
            self.total(),
            self.steady(),
            self.seconds
        )
    }
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:2} {:4}  {name}: {}", if o.0 { "PASS" } else { "FAIL" }, o.1);
        results.push((n, name, o));
    };

    record(1, "dynamics fidelity", dynamics_fidelity());
    record(2, "state transition matrix", stm_correctness());
    record(3, "orbit periods", orbit_periods());
    record(4, "linearization", linearization());
    record(5, "periodic riccati", periodic_lqr());
    record(6, "conic solver", conic_solver());
    record(7, "optimizer sanity", optimizer_sanity());

    let em_ball = fly("earth_moon_ball", true);
    let em_ell = fly("earth_moon_ellipsoid", true);
    let ok = em_ball.log.completed()
        && em_ell.log.completed()
        && in_range(em_ball.total(), 2.0, 4.0)
        && in_range(em_ell.total(), 2.0, 4.0)
        && em_ell.steady() <= 0.2
        && em_ball.steady() <= 0.5
        && em_ell.steady() <= em_ball.steady()
        && em_ball.seconds + em_ell.seconds <= 300.0;
    record(
        8,
        "earth-moon missions",
        (ok, format!("ball {}; ellipsoid {}", em_ball.describe(), em_ell.describe())),
    );

    let se_ball = fly("saturn_enceladus_ball", true);
    let se_ell = fly("saturn_enceladus_ellipsoid", true);
    let ok = se_ball.log.completed()
        && se_ell.log.completed()
        && se_ell.total() <= se_ball.total()
        && in_range(se_ball.total(), 3.0, 9.0)
        && in_range(se_ell.total(), 3.0, 9.0);
    record(
        9,
        "saturn-enceladus missions",
        (ok, format!("ball {}; ellipsoid {}", se_ball.describe(), se_ell.describe())),
    );

    let (em_rate, em_secs) = em_ball.safety();
    let (se_rate, se_secs) = se_ball.safety();
    let (em_ab, em_ab_secs) = fly("earth_moon_ball", false).safety();
    let (se_ab, se_ab_secs) = fly("saturn_enceladus_ball", false).safety();
    let secs = em_secs + se_secs + em_ab_secs + se_ab_secs;
    let ok = em_rate >= 0.95 && se_rate >= 0.90 && em_ab < em_rate && se_ab < se_rate && secs <= 600.0;
    record(
        10,
        "safe exit",
        (
            ok,
            format!(
                "earth-moon {:.2}% (no half-space {:.2}%), saturn-enceladus {:.2}% (no half-space {:.2}%), every 4th state, {secs:.1} s",
                100.0 * em_rate,
                100.0 * em_ab,
                100.0 * se_rate,
                100.0 * se_ab
            ),
        ),
    );

    let runs = [
        ("earth-moon ball", &em_ball),
        ("earth-moon ellipsoid", &em_ell),
        ("saturn-enceladus ball", &se_ball),
        ("saturn-enceladus ellipsoid", &se_ell),
    ];
    let ok = runs.iter().all(|(_, r)| r.quiet() >= 0.5);
    let detail = runs
        .iter()
        .map(|(n, r)| format!("{n} {:.1}%", 100.0 * r.quiet()))
        .collect::<Vec<_>>()
        .join(", ");
    record(11, "impulsive steady state", (ok, detail));

    let failed: Vec<String> = results.iter().filter(|r| !r.2 .0).map(|r| r.0.to_string()).collect();
    if failed.is_empty() {
        println!("all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}

