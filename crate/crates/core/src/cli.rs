//! Command implementations behind the `halokeep` binary.
//!
//! Every command reads a scenario, writes CSV and text files into an output
//! directory and returns an error whose `exit_code` the binary reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::controller::{burn_locations, MissionLog};
use crate::dynamics::{jacobi_constant, State};
use crate::error::{Error, Result};
use crate::halo::{manifold_trajectories, write_initial_guess, Branch, InitialGuess};
use crate::integrator::Tolerances;
use crate::safety::{verify_mission, SafetyConfig, SafetyReport, Verdict};
use crate::scenario::Scenario;

/// Burns with ‖u‖₁ above this (nondimensional) count as maneuvers.
pub const BURN_THRESHOLD: f64 = 1e-9;

/// File names shared between commands.
pub const MISSION_CSV: &str = "mission.csv";
pub const RESOLVED_SCENARIO: &str = "scenario.toml";

pub struct Context {
    pub scenario: Scenario,
    pub out: PathBuf,
    pub verbose: bool,
}

impl Context {
    /// Loads the scenario; the output directory is `out`, else the
    /// scenario's own, else `./out`.
    pub fn new(scenario_path: &Path, out: Option<PathBuf>, verbose: bool) -> Result<Context> {
        let scenario = Scenario::load(scenario_path)?;
        let out = out.or_else(|| scenario.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Ok(Context { scenario, out, verbose })
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| io_error(&self.out, e))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| io_error(path, e.into()))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| io_error(path, e.into())
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn state_cells(x: &State) -> impl Iterator<Item = String> + '_ {
    x.iter().map(|v| fmt(*v))
}

pub fn gen_orbit(ctx: &Context) -> Result<()> {
    ctx.ensure_out()?;
    let (params, corrected, orbit) = ctx.scenario.build_orbit()?;
    ctx.note(format!("corrected in {} iterations, closure {:.2e}", corrected.iterations, corrected.closure));

    let knots_path = ctx.path("orbit_knots.csv");
    let mut w = csv_writer(&knots_path)?;
    let io = csv_io(&knots_path);
    w.write_record(["knot", "t", "qx", "qy", "qz", "vx", "vy", "vz", "jacobi"]).map_err(&io)?;
    for (k, x) in orbit.knots.iter().enumerate() {
        let mut row = vec![k.to_string(), fmt(k as f64 * orbit.dt)];
        row.extend(state_cells(x));
        row.push(fmt(jacobi_constant(x, &params)?));
        w.write_record(&row).map_err(&io)?;
    }
    w.flush().map_err(|e| io_error(&knots_path, e))?;

    let eig_path = ctx.path("eigenvalues.csv");
    let mut w = csv_writer(&eig_path)?;
    let io = csv_io(&eig_path);
    w.write_record(["re", "im", "modulus"]).map_err(&io)?;
    for z in &orbit.eigenvalues {
        w.write_record([fmt(z.re), fmt(z.im), fmt(z.norm())]).map_err(&io)?;
    }
    w.flush().map_err(|e| io_error(&eig_path, e))?;

    let guess = InitialGuess::new(&params.name, corrected.state, corrected.period, orbit.knot_count())?;
    write_initial_guess(&ctx.path("corrected_guess.txt"), &guess)?;

    let mut r = String::new();
    let _ = writeln!(r, "system            {}", params.name);
    let _ = writeln!(r, "initial state     {:?}", corrected.state.as_slice());
    let _ = writeln!(r, "corrector         {} iterations, closure {:.3e}", corrected.iterations, corrected.closure);
    let _ = writeln!(
        r,
        "period            {:.9} TU = {:.4} days = {:.4} hours",
        orbit.period,
        params.time_to_days(orbit.period),
        params.time_to_hours(orbit.period)
    );
    let _ = writeln!(r, "knots             {} (dt = {:.4} hours)", orbit.knot_count(), params.time_to_hours(orbit.dt));
    let _ = writeln!(r, "jacobi constant   {:.12}", jacobi_constant(&orbit.knots[0], &params)?);
    let _ = writeln!(r, "det M             {:.12}", orbit.monodromy.determinant());
    let _ = writeln!(r, "unstable lambda   {:.6}", orbit.unstable_eigenvalue);
    let _ = writeln!(r, "unstable v_u      {:?}", orbit.unstable_direction.as_slice());
    let _ = writeln!(r, "eigenvalues of M");
    for z in &orbit.eigenvalues {
        let _ = writeln!(r, "  {:+.9e} {:+.9e}i   |z| = {:.9e}", z.re, z.im, z.norm());
    }
    let _ = writeln!(
        r,
        "max distance from libration point {:.6} LU ({:.0} km)",
        orbit.max_amplitude(),
        orbit.max_amplitude() * params.length_unit_km
    );
    write_text(&ctx.path("orbit_report.txt"), &r)?;
    print!("{r}");
    Ok(())
}

/// Command-line overrides of the scenario's `[manifolds]` block.
#[derive(Debug, Clone, Copy, Default)]
pub struct ManifoldOptions {
    pub epsilon: Option<f64>,
    pub branch: Option<Branch>,
    pub tau_periods: Option<f64>,
    pub stride: Option<usize>,
}

pub fn manifolds(ctx: &Context, opts: ManifoldOptions) -> Result<()> {
    let spec = ctx.scenario.manifolds;
    let epsilon = opts.epsilon.unwrap_or(spec.epsilon);
    let tau_periods = opts.tau_periods.unwrap_or(spec.tau_periods);
    let stride = opts.stride.unwrap_or(spec.stride);
    let branches = match opts.branch {
        Some(b) => vec![b],
        None => vec![Branch::Positive, Branch::Negative],
    };
    let (_, _, orbit) = ctx.scenario.build_orbit()?;
    let dir = ctx.path("manifolds");
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;

    let index_path = ctx.path("manifolds.csv");
    let mut index = csv_writer(&index_path)?;
    let io = csv_io(&index_path);
    index
        .write_record(["branch", "knot", "epsilon", "points", "final_t", "final_qx", "file", "status"])
        .map_err(&io)?;
    let mut count = 0;
    for branch in branches {
        let name = if branch == Branch::Positive { "positive" } else { "negative" };
        let family = manifold_trajectories(&orbit, epsilon, branch, tau_periods * orbit.period, stride, Tolerances::default())?;
        for m in family {
            let file = format!("{name}_{:03}.csv", m.departure_knot);
            let (points, final_t, final_x, status) = match &m.trajectory {
                Ok(traj) => {
                    let path = dir.join(&file);
                    let mut w = csv_writer(&path)?;
                    let pio = csv_io(&path);
                    w.write_record(["t", "qx", "qy", "qz", "vx", "vy", "vz"]).map_err(&pio)?;
                    for (t, x) in traj.times.iter().zip(&traj.states) {
                        let mut row = vec![fmt(*t)];
                        row.extend(state_cells(x));
                        w.write_record(&row).map_err(&pio)?;
                    }
                    w.flush().map_err(|e| io_error(&path, e))?;
                    let (t, x) = traj.last().expect("non-empty trajectory");
                    (traj.len(), t, x[0], "ok".to_string())
                }
                Err(e) => (0, f64::NAN, f64::NAN, e.to_string()),
            };
            index
                .write_record([
                    name.to_string(),
                    m.departure_knot.to_string(),
                    fmt(epsilon),
                    points.to_string(),
                    fmt(final_t),
                    fmt(final_x),
                    file,
                    status,
                ])
                .map_err(&io)?;
            count += 1;
        }
    }
    index.flush().map_err(|e| io_error(&index_path, e))?;
    println!("wrote {count} manifold trajectories to {}", dir.display());
    Ok(())
}

fn write_cycles(log: &MissionLog, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = csv_io(path);
    w.write_record(["cycle", "first_step", "status", "iterations", "max_residual", "planned_delta_v_mps"])
        .map_err(&io)?;
    for c in &log.cycles {
        w.write_record([
            c.cycle.to_string(),
            c.first_step.to_string(),
            c.status.label().to_string(),
            c.iterations.to_string(),
            fmt(c.max_residual),
            fmt(c.planned_delta_v),
        ])
        .map_err(&io)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Flies the scenario's mission and writes the log, per-cycle solver records
/// and a summary. A failed mission still writes everything it has, then
/// returns the failure.
pub fn simulate(ctx: &Context) -> Result<MissionLog> {
    ctx.ensure_out()?;
    let prepared = ctx.scenario.prepare()?;
    if let Some(ctg) = &prepared.cost_to_go {
        ctx.note(format!(
            "cost-to-go converged in {} passes ({} periods of plain recursion)",
            ctg.periods, ctg.equivalent_periods
        ));
    }
    let cfg = ctx.scenario.mission_config();
    ctx.note(format!("flying {} revolutions", cfg.revolutions));
    let log = prepared.run(&cfg)?;
    log.write_csv(&ctx.path(MISSION_CSV))?;
    write_cycles(&log, &ctx.path("cycles.csv"))?;
    write_text(&ctx.path(RESOLVED_SCENARIO), &ctx.scenario.to_toml())?;

    let mut s = log.summary_text(&prepared.params);
    let per_rev = log.per_revolution_delta_v();
    let _ = writeln!(s, "per-revolution delta-v (m/s)");
    for (i, dv) in per_rev.iter().enumerate() {
        let _ = writeln!(s, "  {:4} {:.9}", i + 1, dv);
    }
    let _ = writeln!(s, "\n# resolved scenario\n{}", ctx.scenario.to_toml());
    write_text(&ctx.path("summary.txt"), &s)?;
    print!("{}", log.summary_text(&prepared.params));
    match &log.failure {
        Some(f) => Err(f.to_error()),
        None => Ok(log),
    }
}

/// Classifies the logged states of a mission. Without `log_path` the mission
/// is flown first.
pub fn verify(ctx: &Context, log_path: Option<&Path>) -> Result<SafetyReport> {
    ctx.ensure_out()?;
    let cfg = safety_config(&ctx.scenario);
    let prepared;
    let (log, orbit) = match log_path {
        Some(p) => {
            let (_, _, orbit) = ctx.scenario.build_orbit()?;
            (MissionLog::read_csv(p, &orbit)?, orbit)
        }
        None => {
            prepared = ctx.scenario.prepare()?;
            let log = prepared.run(&ctx.scenario.mission_config())?;
            if let Some(f) = &log.failure {
                return Err(f.to_error());
            }
            (log, prepared.orbit.clone())
        }
    };
    ctx.note(format!("classifying {} states", log.steps.len().div_ceil(cfg.sample_stride)));
    let report = verify_mission(&log, &orbit, &cfg)?;
    report.write_csv(&ctx.path("safety.csv"))?;
    let text = safety_summary(&report);
    write_text(&ctx.path("safety_summary.txt"), &text)?;
    print!("{text}");
    Ok(report)
}

/// The scenario's safety block, or revolutions 2 to the end if absent.
pub fn safety_config(s: &Scenario) -> SafetyConfig {
    s.safety
        .clone()
        .unwrap_or_else(|| SafetyConfig::with_window(2.min(s.mission.revolutions), s.mission.revolutions))
}

pub fn safety_summary(report: &SafetyReport) -> String {
    let mut t = String::new();
    let (a, b) = report.config.window;
    let _ = writeln!(t, "window            revolutions {a}..={b}, every {} step(s)", report.config.sample_stride);
    let _ = writeln!(t, "boundary radius   {:.6} LU", report.boundary_radius);
    let _ = writeln!(t, "samples           {}", report.window_samples);
    for v in [Verdict::EscapeIntended, Verdict::EscapeOpposite, Verdict::ImpactSecondary, Verdict::Bounded] {
        let _ = writeln!(t, "  {:17} {}", v.label(), report.count(v));
    }
    let _ = writeln!(t, "success rate      {:.4}%", 100.0 * report.success_rate);
    let _ = writeln!(t, "margin agreement  {:.4}", report.margin_consistency());
    t
}

/// Tables for plotting and a text digest from a `simulate` output directory.
pub fn report(run_dir: &Path) -> Result<String> {
    let scenario = Scenario::load(&run_dir.join(RESOLVED_SCENARIO))?;
    let (params, _, orbit) = scenario.build_orbit()?;
    let log = MissionLog::read_csv(&run_dir.join(MISSION_CSV), &orbit)?;

    let burns = burn_locations(&log, BURN_THRESHOLD);
    let burns_path = run_dir.join("burns.csv");
    let mut w = csv_writer(&burns_path)?;
    let io = csv_io(&burns_path);
    w.write_record(["step", "revolution", "phase", "qx", "qy", "qz", "ux", "uy", "uz", "u_l1", "delta_v_mps"])
        .map_err(&io)?;
    for (step, q, u) in &burns {
        let rec = &log.steps[*step];
        let mut row = vec![step.to_string(), log.revolution_of(*step).to_string(), rec.phase.to_string()];
        row.extend(q.iter().chain(u.iter()).map(|v| fmt(*v)));
        row.push(fmt(u.lp_norm(1)));
        row.push(fmt(rec.delta_v));
        w.write_record(&row).map_err(&io)?;
    }
    w.flush().map_err(|e| io_error(&burns_path, e))?;

    let per_rev = log.per_revolution_delta_v();
    let rev_path = run_dir.join("per_revolution.csv");
    let mut w = csv_writer(&rev_path)?;
    let io = csv_io(&rev_path);
    w.write_record(["revolution", "delta_v_mps", "max_state_margin", "min_half_space"]).map_err(&io)?;
    let n = log.steps_per_revolution;
    for (i, dv) in per_rev.iter().enumerate() {
        let window = &log.steps[i * n..((i + 1) * n).min(log.steps.len())];
        let margin = window.iter().map(|s| s.state_margin).fold(f64::NEG_INFINITY, f64::max);
        let hs = window.iter().map(|s| s.half_space).fold(f64::INFINITY, f64::min);
        w.write_record([(i + 1).to_string(), fmt(*dv), fmt(margin), fmt(hs)]).map_err(&io)?;
    }
    w.flush().map_err(|e| io_error(&rev_path, e))?;

    let total = log.total_delta_v();
    let summed: f64 = per_rev.iter().sum();
    // Burns whose largest component is along x, split by the side of the
    // x-z plane and of the libration point they happen on.
    let x_burns: Vec<_> = burns.iter().filter(|(_, _, u)| u.iamax() == 0).collect();
    let north = x_burns.iter().filter(|(_, q, _)| q.y > 0.0).count();
    let beyond = x_burns.iter().filter(|(_, q, _)| q.x > orbit.libration_point.x).count();

    let mut t = String::new();
    let _ = writeln!(t, "system              {}", params.name);
    let _ = writeln!(t, "variant             {}", log.variant.label());
    let _ = writeln!(t, "steps               {}", log.steps.len());
    let _ = writeln!(t, "total delta-v       {total:.9} m/s");
    let _ = writeln!(t, "sum per revolution  {summed:.9} m/s");
    let _ = writeln!(t, "revs 2.. delta-v    {:.9} m/s", log.delta_v_between(2, usize::MAX));
    let _ = writeln!(t, "burns               {} of {} steps", burns.len(), log.steps.len());
    let _ = writeln!(t, "quiet steps rev 3+  {:.2}%", 100.0 * log.quiet_fraction(3, BURN_THRESHOLD));
    let _ = writeln!(
        t,
        "x burns             {} ({} at y > 0, {} at y < 0; {} beyond the libration point, {} before)",
        x_burns.len(),
        north,
        x_burns.len() - north,
        beyond,
        x_burns.len() - beyond
    );
    let _ = writeln!(
        t,
        "max state margin    {:.4}",
        log.steps.iter().map(|s| s.state_margin).fold(f64::NEG_INFINITY, f64::max)
    );
    write_text(&run_dir.join("report.txt"), &t)?;
    print!("{t}");
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub completed: bool,
    pub total_delta_v: f64,
    pub steady_delta_v: f64,
    pub quiet_fraction: f64,
    pub failure: Option<String>,
}

/// Flies one mission per value of the scenario's `[sweep]` parameter, in
/// parallel, and tabulates the outcomes.
pub fn sweep(ctx: &Context) -> Result<Vec<SweepPoint>> {
    let spec = ctx
        .scenario
        .sweep
        .clone()
        .ok_or_else(|| Error::InvalidArgument("scenario has no [sweep] block".into()))?;
    ctx.ensure_out()?;
    let prepared = ctx.scenario.prepare()?;
    let points: Vec<SweepPoint> = spec
        .values
        .par_iter()
        .map(|&value| -> Result<SweepPoint> {
            let s = ctx.scenario.with_parameter(&spec.parameter, value)?;
            let log = prepared.run(&s.mission_config())?;
            Ok(SweepPoint {
                value,
                completed: log.completed(),
                total_delta_v: log.total_delta_v(),
                steady_delta_v: log.delta_v_between(2, usize::MAX),
                quiet_fraction: log.quiet_fraction(3, BURN_THRESHOLD),
                failure: log.failure.map(|f| f.reason),
            })
        })
        .collect::<Result<_>>()?;
    let path = ctx.path("sweep.csv");
    let mut w = csv_writer(&path)?;
    let io = csv_io(&path);
    w.write_record([spec.parameter.as_str(), "completed", "total_delta_v_mps", "revs_2_on_delta_v_mps", "quiet_fraction", "failure"])
        .map_err(&io)?;
    for p in &points {
        w.write_record([
            fmt(p.value),
            p.completed.to_string(),
            fmt(p.total_delta_v),
            fmt(p.steady_delta_v),
            fmt(p.quiet_fraction),
            p.failure.clone().unwrap_or_default(),
        ])
        .map_err(&io)?;
    }
    w.flush().map_err(|e| io_error(&path, e))?;
    for p in &points {
        println!(
            "{} = {:<10e} total {:.6} m/s  revs 2.. {:.6} m/s  quiet {:.1}%  {}",
            spec.parameter,
            p.value,
            p.total_delta_v,
            p.steady_delta_v,
            100.0 * p.quiet_fraction,
            if p.completed { "completed" } else { "FAILED" }
        );
    }
    Ok(points)
}
