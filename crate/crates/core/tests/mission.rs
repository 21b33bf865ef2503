mod common;

use halokeep::controller::{InjectionError, MissionConfig, MissionLog, TruthModel};
use halokeep::dynamics::State;
use halokeep::safety::{classify_exit, verify_mission, SafeSide, SafetyConfig, Verdict};

fn short(revolutions: usize) -> MissionConfig {
    let mut cfg = common::scenario("earth_moon_ball").mission_config();
    cfg.revolutions = revolutions;
    cfg
}

fn flown(revolutions: usize) -> &'static MissionLog {
    use std::sync::OnceLock;
    static CELL: OnceLock<MissionLog> = OnceLock::new();
    let log = CELL.get_or_init(|| common::earth_moon().run(&short(revolutions)).unwrap());
    assert_eq!(log.steps.len(), revolutions * 40);
    log
}

#[test]
fn one_solve_per_stride() {
    let mut cfg = short(2);
    cfg.stride = Some(7);
    let log = common::earth_moon().run(&cfg).unwrap();
    assert!(log.completed());
    assert_eq!(log.steps.len(), 80);
    assert_eq!(log.cycles.len(), 80usize.div_ceil(7));
    assert!(log.cycles.iter().enumerate().all(|(i, c)| c.first_step == 7 * i));
    assert_eq!(flown(4).cycles.len(), 8);
}

#[test]
fn missions_are_deterministic() {
    let again = common::earth_moon().run(&short(4)).unwrap();
    assert_eq!(again.steps, flown(4).steps);
    assert_eq!(again.final_state, flown(4).final_state);
}

#[test]
fn per_revolution_costs_add_up() {
    let log = flown(4);
    let per_rev = log.per_revolution_delta_v();
    assert_eq!(per_rev.len(), 4);
    let sum: f64 = per_rev.iter().sum();
    assert!((sum - log.total_delta_v()).abs() <= 1e-12 * log.total_delta_v());
    assert!((log.delta_v_between(2, 4) - per_rev[1..].iter().sum::<f64>()).abs() < 1e-12);
    // the injection error is removed during the first revolution
    assert!(per_rev[0] > 10.0 * per_rev[1..].iter().sum::<f64>());
}

#[test]
fn flown_states_stay_near_the_constraints() {
    let log = flown(4);
    let free = common::scenario("earth_moon_ball").constraints.free_steps;
    let a = common::scenario("earth_moon_ball").constraints.a;
    for s in log.steps.iter().filter(|s| s.step % 20 > free) {
        assert!(s.state_margin <= 1.1, "step {} margin {}", s.step, s.state_margin);
        assert!(s.half_space >= 0.9 * a, "step {} half-space {:e}", s.step, s.half_space);
    }
}

#[test]
fn an_orbit_started_on_the_reference_costs_little() {
    // Against the adaptive flow the knots are a true orbit, so only integration
    // error needs correcting. The RK4 map instead drifts off the knots by a
    // few 1e-9 LU per step and holding it costs close to 1 mm/s per revolution.
    let params = &common::earth_moon().params;
    let mut cfg = short(5);
    cfg.injection = InjectionError::default();
    cfg.constraints.half_space = false;
    cfg.truth = TruthModel::HighOrder;
    let exact = common::earth_moon().run(&cfg).unwrap();
    let dv = params.velocity_to_mps(exact.total_delta_v());
    assert!(dv < 1e-6, "{dv:e} m/s");
    cfg.truth = TruthModel::Rk4;
    let rk4 = common::earth_moon().run(&cfg).unwrap();
    for rev in &rk4.per_revolution_delta_v()[1..] {
        let mps = params.velocity_to_mps(*rev);
        assert!((5e-4..2e-3).contains(&mps), "{mps:e} m/s");
    }
}

#[test]
fn logs_round_trip_through_csv() {
    let log = flown(4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mission.csv");
    log.write_csv(&path).unwrap();
    let back = MissionLog::read_csv(&path, &common::earth_moon().orbit).unwrap();
    assert_eq!(back.steps, log.steps);
    assert_eq!(back.variant, log.variant);
    assert_eq!(back.total_delta_v(), log.total_delta_v());
    std::fs::write(&path, "step,time\n0,0\n").unwrap();
    assert!(MissionLog::read_csv(&path, &common::earth_moon().orbit).is_err());
}

fn classify(x: &State, periods: f64, radius_scale: f64) -> Verdict {
    let p = common::earth_moon();
    let r = radius_scale * 5.0 * p.orbit.max_amplitude();
    classify_exit(x, &p.orbit, periods, r, SafeSide::PositiveX, p.params.secondary_radius()).verdict
}

#[test]
fn manifold_kicks_are_classified_by_side() {
    let orbit = &common::earth_moon().orbit;
    for k in [0, 13, 27] {
        let d = orbit.manifold_direction(k);
        let plus = orbit.knot(k) + 1e-6 * d;
        let minus = orbit.knot(k) - 1e-6 * d;
        assert_eq!(classify(&plus, 3.0, 1.0), Verdict::EscapeIntended, "knot {k}");
        assert!(matches!(classify(&minus, 3.0, 1.0), Verdict::EscapeOpposite | Verdict::ImpactSecondary), "knot {k}");
        // a wider sphere changes when the exit is seen, not which side it is on
        assert_eq!(classify(&plus, 6.0, 2.0), Verdict::EscapeIntended, "knot {k}");
    }
    assert_eq!(classify(orbit.knot(5), 1.0, 1.0), Verdict::Bounded);
}

#[test]
fn report_counts_cover_the_window() {
    let log = flown(4);
    let orbit = &common::earth_moon().orbit;
    let mut cfg = SafetyConfig::with_window(2, 4);
    cfg.sample_stride = 8;
    let report = verify_mission(log, orbit, &cfg).unwrap();
    assert_eq!(report.classifications.len(), 20);
    assert_eq!(report.window_samples, 15);
    let counted: usize = [Verdict::EscapeIntended, Verdict::EscapeOpposite, Verdict::ImpactSecondary, Verdict::Bounded]
        .into_iter()
        .map(|v| report.count(v))
        .sum();
    assert_eq!(counted, report.window_samples);
    assert!((0.0..=1.0).contains(&report.margin_consistency()));
    cfg.sample_stride = 0;
    assert!(verify_mission(log, orbit, &cfg).is_err());
}

