mod common;

use halokeep::dynamics::{
    derivative, flow_with_stm, jacobi_constant, propagate_to, rotating_symplectic_form, step_discrete, step_rk4,
    Control, State,
};
use halokeep::integrator::Tolerances;
use proptest::prelude::*;

fn tight() -> Tolerances {
    Tolerances::new(1e-13, 1e-13).unwrap()
}

#[test]
fn rk4_is_fourth_order_against_high_order_flow() {
    let p = common::earth_moon();
    let x = p.orbit.knots[7];
    let err = |dt: f64| {
        let reference = propagate_to(&x, (0.0, dt), &p.params, tight()).unwrap();
        (step_rk4(&x, &Control::zeros(), dt, &p.params).unwrap() - reference).norm()
    };
    // Local error is O(dt⁵); over a fixed span of n steps it is O(dt⁴).
    let span = 0.4;
    let global = |n: usize| {
        let dt = span / n as f64;
        let mut y = x;
        for _ in 0..n {
            y = step_rk4(&y, &Control::zeros(), dt, &p.params).unwrap();
        }
        (y - propagate_to(&x, (0.0, span), &p.params, tight()).unwrap()).norm()
    };
    let ratio = global(20) / global(40);
    assert!((12.0..=20.0).contains(&ratio), "halving ratio {ratio}");
    assert!(err(0.01) < 1e-8, "one step error {}", err(0.01));
}

#[test]
fn discrete_map_tracks_the_flow_over_a_knot_interval() {
    for p in [common::earth_moon(), common::saturn_enceladus()] {
        let x = p.orbit.knots[3];
        let reference = propagate_to(&x, (0.0, p.orbit.dt), &p.params, tight()).unwrap();
        let single = (step_rk4(&x, &Control::zeros(), p.orbit.dt, &p.params).unwrap() - reference).norm();
        let fd = (step_discrete(&x, &Control::zeros(), p.orbit.dt, &p.params).unwrap() - reference).norm();
        assert!(fd < single / 100.0, "{}: {fd:e} vs {single:e}", p.params.name);
    }
}

#[test]
fn small_impulse_changes_velocity_by_a_dt() {
    let p = common::earth_moon();
    let x = p.orbit.knots[0];
    let (a, dt) = (1e-3, 1e-4);
    let dv = step_rk4(&x, &Control::new(a, 0.0, 0.0), dt, &p.params).unwrap()
        - step_rk4(&x, &Control::zeros(), dt, &p.params).unwrap();
    assert!((dv[3] / (a * dt) - 1.0).abs() < 1e-4);
}

#[test]
fn libration_point_is_an_equilibrium() {
    let p = common::earth_moon();
    let l2 = p.orbit.libration_point;
    let x = State::new(l2.x, l2.y, l2.z, 0.0, 0.0, 0.0);
    assert!(derivative(&x, &Control::zeros(), &p.params).unwrap().amax() < 1e-13);
}

#[test]
fn jacobi_constant_is_stationary_along_the_flow() {
    let p = common::earth_moon();
    let x = p.orbit.knots[11];
    let h = 1e-5;
    let c = |t: f64| jacobi_constant(&propagate_to(&x, (0.0, t), &p.params, tight()).unwrap(), &p.params).unwrap();
    let rate = (c(h) - c(-h)) / (2.0 * h);
    assert!(rate.abs() < 1e-7, "dC/dt = {rate:e}");
}

#[test]
fn state_transition_matrix_is_symplectic() {
    for p in [common::earth_moon(), common::saturn_enceladus()] {
        let (_, phi) = flow_with_stm(&p.orbit.knots[0], (0.0, 0.37 * p.orbit.period), &p.params, tight()).unwrap();
        let omega = rotating_symplectic_form();
        let defect = (phi.transpose() * omega * phi - omega).amax();
        assert!(defect < 1e-6, "{}: {defect:e}", p.params.name);
        assert!((phi.determinant() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn monodromy_is_symplectic() {
    for p in [common::earth_moon(), common::saturn_enceladus()] {
        let m = p.orbit.monodromy;
        let omega = rotating_symplectic_form();
        let defect = (m.transpose() * omega * m - omega).amax() / m.amax().powi(2);
        assert!(defect < 1e-6, "{}: {defect:e}", p.params.name);
    }
}

fn mirror(x: &State) -> State {
    State::new(x[0], -x[1], x[2], -x[3], x[4], -x[5])
}

#[test]
fn backward_flow_of_the_mirror_image_mirrors_the_forward_flow() {
    let p = common::earth_moon();
    let x = p.orbit.knots[5] + State::new(1e-4, 2e-4, -1e-4, 3e-4, 0.0, 1e-4);
    let forward = propagate_to(&x, (0.0, 0.8), &p.params, tight()).unwrap();
    let backward = propagate_to(&mirror(&x), (0.0, -0.8), &p.params, tight()).unwrap();
    assert!((mirror(&backward) - forward).amax() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn jacobi_constant_is_conserved_near_the_orbit(k in 0usize..40, d in proptest::array::uniform6(-1e-4f64..1e-4)) {
        let p = common::earth_moon();
        let x = p.orbit.knots[k] + State::from_row_slice(&d);
        let y = propagate_to(&x, (0.0, 0.5 * p.orbit.period), &p.params, Tolerances::default()).unwrap();
        let c0 = jacobi_constant(&x, &p.params).unwrap();
        prop_assert!(((jacobi_constant(&y, &p.params).unwrap() - c0) / c0).abs() < 1e-10);
    }

    #[test]
    fn jacobi_constant_has_the_plane_symmetry(d in proptest::array::uniform6(-1e-2f64..1e-2)) {
        let p = common::earth_moon();
        let x = p.orbit.knots[0] + State::from_row_slice(&d);
        let c = jacobi_constant(&x, &p.params).unwrap();
        let m = jacobi_constant(&mirror(&x), &p.params).unwrap();
        prop_assert!((c - m).abs() <= 1e-14 * c.abs());
    }
}
