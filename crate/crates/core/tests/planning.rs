mod common;

use halokeep::conic::{kkt_residuals, solve, Cone, ConicProgram, SolveStatus, SolverSettings, SparseMatrix};
use halokeep::dynamics::State;
use halokeep::linearize::LinearizedModel;
use halokeep::riccati::{periodic_riccati, CostWeights};
use halokeep::stationkeeping::{
    plan, ConstraintConfig, ConstraintUnits, ConstraintVariant, HalfSpaceNormal, StationkeepingProblem,
};
use nalgebra::Matrix6;
use proptest::prelude::*;

fn model() -> &'static LinearizedModel {
    use std::sync::OnceLock;
    static CELL: OnceLock<LinearizedModel> = OnceLock::new();
    CELL.get_or_init(|| common::earth_moon().model.without_offsets())
}

#[test]
fn cost_to_go_is_a_fixed_point_of_one_period() {
    for (p, q, r) in [(common::earth_moon(), 1e-3, 1e3), (common::saturn_enceladus(), 1e-6, 1e-3)] {
        let w = CostWeights::isotropic(q, r);
        let ctg = periodic_riccati(&p.model, &w, 1e-8, 500).unwrap();
        let n = p.model.segments();
        let mut next = ctg.p[n];
        let mut worst = 0.0f64;
        for k in (0..n).rev() {
            let (a, b) = p.model.at(k);
            let s = w.r + b.transpose() * next * b;
            let gain = s.try_inverse().unwrap() * b.transpose() * next * a;
            let pk: Matrix6<f64> = w.q + a.transpose() * next * a - a.transpose() * next * b * gain;
            worst = worst.max((pk - ctg.p[k]).norm() / ctg.p[k].norm());
            next = ctg.p[k];
        }
        assert!(worst < 1e-6, "{}: {worst:e}", p.params.name);
        assert!(ctg.p.iter().all(|m| m.cholesky().is_some()));
    }
}

fn random_program(seed: &[f64], n: usize, m: usize) -> ConicProgram {
    // box rows keep it bounded, a second-order cone ties the first two variables
    let mut trip = Vec::new();
    let mut h = Vec::new();
    for i in 0..n {
        trip.push((2 * i, i, 1.0));
        trip.push((2 * i + 1, i, -1.0));
        h.extend([1.0 + seed[i].abs(), 1.0 + seed[n + i].abs()]);
    }
    for r in 0..m {
        for j in 0..n {
            trip.push((2 * n + r, j, seed[(r * n + j) % seed.len()]));
        }
        h.push(0.5 + seed[r % seed.len()].abs());
    }
    let row = 2 * n + m;
    trip.push((row + 1, 0, -1.0));
    trip.push((row + 2, 1, -1.0));
    h.extend([2.0, 0.0, 0.0]);
    let c: Vec<f64> = (0..n).map(|i| seed[(3 * i + 1) % seed.len()]).collect();
    let g = SparseMatrix::from_triplets(row + 3, n, trip).unwrap();
    ConicProgram::new(c, g, h, vec![Cone::Nonnegative(row), Cone::SecondOrder(3)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_scaling_leaves_the_minimiser(seed in proptest::collection::vec(-1.0f64..1.0, 12), alpha in 0.05f64..20.0) {
        let p = random_program(&seed, 3, 2);
        let base = solve(&p, SolverSettings::default()).unwrap();
        prop_assume!(base.status == SolveStatus::Optimal);
        let mut scaled = p.clone();
        scaled.c.iter_mut().for_each(|v| *v *= alpha);
        let s = solve(&scaled, SolverSettings::default()).unwrap();
        prop_assert_eq!(s.status, SolveStatus::Optimal);
        prop_assert!((s.objective - alpha * base.objective).abs() < 1e-6 * (1.0 + alpha));
        // the minimiser may be a face when c is orthogonal to it; compare values there
        let z_err: f64 = s.z.iter().zip(&base.z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let value_gap = (p.c.iter().zip(&s.z).map(|(c, z)| c * z).sum::<f64>() - base.objective).abs();
        prop_assert!(z_err < 1e-5 || value_gap < 1e-7, "z moved {} with value gap {}", z_err, value_gap);
    }

    #[test]
    fn optimal_returns_are_complementary_and_repeatable(seed in proptest::collection::vec(-1.0f64..1.0, 12)) {
        let p = random_program(&seed, 4, 3);
        let a = solve(&p, SolverSettings::default()).unwrap();
        let b = solve(&p, SolverSettings::default()).unwrap();
        prop_assert_eq!(&a, &b);
        if a.status == SolveStatus::Optimal {
            let r = kkt_residuals(&p, &a.z, &a.s, &a.y);
            prop_assert!(r.max() < 1e-8, "{:?}", r);
        }
    }

    #[test]
    fn text_dump_round_trips(seed in proptest::collection::vec(-1e3f64..1e3, 12)) {
        let p = random_program(&seed, 3, 3);
        prop_assert_eq!(ConicProgram::from_text(&p.to_text()).unwrap(), p);
    }
}

fn ball(r_q: f64, r_v: f64, a: f64, half_space: bool, normal: HalfSpaceNormal) -> ConstraintConfig {
    ConstraintConfig {
        variant: ConstraintVariant::EuclideanBall,
        units: ConstraintUnits::Nondimensional,
        r_q,
        r_v,
        c: 1.0,
        a,
        half_space,
        normal,
        free_steps: 0,
    }
}

fn problem(cfg: ConstraintConfig, dx: State, horizon: usize) -> StationkeepingProblem<'static> {
    StationkeepingProblem {
        orbit: &common::earth_moon().orbit,
        model: model(),
        shape: None,
        phase: 9,
        initial_error: dx,
        horizon,
        constraints: cfg,
    }
}

#[test]
fn steady_state_plans_are_impulsive() {
    let cfg = ball(2e-5, 8e-6, 3e-8, true, HalfSpaceNormal::Manifold);
    let p = plan(&problem(cfg, State::zeros(), 80), SolverSettings::default()).unwrap();
    assert!(p.is_valid());
    let quiet = p.controls.iter().filter(|u| u.lp_norm(1) < 1e-9).count() as f64 / 80.0;
    assert!(quiet > 0.5, "quiet fraction {quiet}");
}

#[test]
fn free_steps_relax_the_start_of_the_plan() {
    let dx = State::new(4e-5, -1e-5, 0.0, 0.0, 3e-5, 0.0);
    let with_free = |n: usize| {
        let mut cfg = ball(2e-5, 1e-5, 0.0, false, HalfSpaceNormal::Manifold);
        cfg.free_steps = n;
        problem(cfg, dx, 40)
    };
    // one burn cannot pull a position error twice the bound back by the next knot
    let strict = plan(&with_free(0), SolverSettings::default()).unwrap();
    assert_eq!(strict.status, SolveStatus::PrimalInfeasible);
    let four = with_free(4);
    let relaxed = plan(&four, SolverSettings::default()).unwrap();
    let looser = plan(&with_free(8), SolverSettings::default()).unwrap();
    assert!(relaxed.is_valid() && looser.is_valid());
    assert!(looser.objective <= relaxed.objective * (1.0 + 1e-7));
    for x in &relaxed.predicted[5..] {
        assert!(x.fixed_rows::<3>(0).norm() <= 2e-5 * (1.0 + 1e-6));
        assert!(x.fixed_rows::<3>(3).norm() <= 1e-5 * (1.0 + 1e-6));
    }
    assert!(four.constraint_violation(&relaxed) < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn optimal_plans_satisfy_the_linear_model(d in proptest::array::uniform6(-3e-5f64..3e-5), uc in any::<bool>()) {
        let normal = if uc { HalfSpaceNormal::UnstableCoordinate } else { HalfSpaceNormal::Manifold };
        let mut cfg = ball(2e-5, 2e-5, 1e-8, true, normal);
        cfg.free_steps = 5;
        let pr = problem(cfg, State::from_row_slice(&d), 40);
        let p = plan(&pr, SolverSettings::default()).unwrap();
        prop_assert!(p.is_valid(), "{:?}", p.status);
        prop_assert!(pr.constraint_violation(&p) < 1e-7);
    }
}
