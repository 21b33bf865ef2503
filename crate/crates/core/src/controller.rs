//! Receding-horizon closed loop on the discrete nonlinear dynamics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::conic::{SolveStatus, SolverSettings};
use crate::dynamics::{step_discrete, step_high_order, Control, Mat6, State};
use crate::error::{Error, Result};
use crate::halo::ReferenceOrbit;
use crate::integrator::Tolerances;
use crate::linearize::LinearizedModel;
use crate::stationkeeping::{plan, ConstraintConfig, ConstraintVariant, HalfSpaceNormal, StationkeepingProblem};
use crate::system::SystemParams;

/// Offsets added to the first reference knot, in metres and m/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionError {
    #[serde(default)]
    pub position_m: [f64; 3],
    #[serde(default)]
    pub velocity_mps: [f64; 3],
}

impl InjectionError {
    pub fn along_x_and_vy(position_m: f64, velocity_mps: f64) -> Self {
        Self {
            position_m: [position_m, 0.0, 0.0],
            velocity_mps: [0.0, velocity_mps, 0.0],
        }
    }
}

pub fn inject_error(x0: &State, err: &InjectionError, params: &SystemParams) -> State {
    let mut x = *x0;
    for i in 0..3 {
        x[i] += params.meters_to_length(err.position_m[i]);
        x[i + 3] += params.mps_to_velocity(err.velocity_mps[i]);
    }
    x
}

/// Propagator used for the simulated spacecraft.
///
/// The planner's model follows the choice: against the RK4 map it keeps the
/// one-step offsets (the reference knots are not an RK4 orbit), against the
/// high-order flow it drops them (the knots are a true orbit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthModel {
    /// The same RK4 zero-order-hold map the planner is linearised on.
    #[default]
    Rk4,
    /// Adaptive eighth-order integration of each zero-order-hold interval.
    HighOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionConfig {
    pub truth: TruthModel,
    pub revolutions: usize,
    pub injection: InjectionError,
    pub constraints: ConstraintConfig,
    pub solver: SolverSettings,
    /// Planning horizon in steps; `None` means two revolutions.
    pub horizon: Option<usize>,
    /// Steps applied per cycle; `None` means half a revolution.
    pub stride: Option<usize>,
}

/// Everything the loop needs that does not change between cycles.
#[derive(Debug, Clone, Copy)]
pub struct MissionSetup<'a> {
    pub orbit: &'a ReferenceOrbit,
    pub model: &'a LinearizedModel,
    pub shape: Option<&'a [Mat6]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub phase: usize,
    pub state: State,
    pub error: State,
    pub control: Control,
    pub delta_v: f64,
    /// Ball: max(‖Δq‖/r_q, ‖Δv‖/r_v). Ellipsoid: ‖L Δx‖/√c. At most 1 when satisfied.
    pub state_margin: f64,
    /// Δx · d_k, to be compared with `a`.
    pub half_space: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub first_step: usize,
    pub status: SolveStatus,
    pub iterations: u32,
    pub max_residual: f64,
    pub planned_delta_v: f64,
}

#[derive(Debug, Clone)]
pub struct MissionFailure {
    pub cycle: usize,
    pub reason: String,
    /// Set when the failure is numerical (ill-conditioned solve, failed
    /// propagation) rather than an infeasible or unbounded plan.
    pub numerical: bool,
}

impl MissionFailure {
    pub fn to_error(&self) -> Error {
        if self.numerical {
            Error::Numerical(format!("mission cycle {}: {}", self.cycle, self.reason))
        } else {
            Error::MissionFailure {
                cycle: self.cycle,
                reason: self.reason.clone(),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MissionLog {
    pub system: String,
    pub variant: ConstraintVariant,
    pub dt: f64,
    pub steps_per_revolution: usize,
    pub steps: Vec<StepRecord>,
    pub cycles: Vec<CycleRecord>,
    /// Truth state after the last applied step.
    pub final_state: State,
    pub failure: Option<MissionFailure>,
}

impl MissionLog {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn total_delta_v(&self) -> f64 {
        self.steps.iter().fold(0.0, |acc, s| acc + s.delta_v)
    }

    /// Revolution number (1-based) of a step.
    pub fn revolution_of(&self, step: usize) -> usize {
        step / self.steps_per_revolution + 1
    }

    /// Delta-v of every revolution, index 0 is revolution 1.
    pub fn per_revolution_delta_v(&self) -> Vec<f64> {
        let revs = self.steps.len().div_ceil(self.steps_per_revolution);
        let mut out = vec![0.0; revs];
        for s in &self.steps {
            out[s.step / self.steps_per_revolution] += s.delta_v;
        }
        out
    }

    /// Delta-v over revolutions `first..=last` (1-based, inclusive).
    pub fn delta_v_between(&self, first: usize, last: usize) -> f64 {
        self.steps
            .iter()
            .filter(|s| (first..=last).contains(&self.revolution_of(s.step)))
            .fold(0.0, |acc, s| acc + s.delta_v)
    }

    /// Fraction of steps from revolution `first` on with ‖u‖₁ below `threshold`.
    pub fn quiet_fraction(&self, first: usize, threshold: f64) -> f64 {
        let window: Vec<&StepRecord> = self.steps.iter().filter(|s| self.revolution_of(s.step) >= first).collect();
        if window.is_empty() {
            return 0.0;
        }
        window.iter().filter(|s| s.control.lp_norm(1) < threshold).count() as f64 / window.len() as f64
    }

    pub const CSV_HEADER: [&'static str; 26] = [
        "step", "time", "revolution", "phase", "qx", "qy", "qz", "vx", "vy", "vz", "dqx", "dqy", "dqz", "dvx", "dvy",
        "dvz", "ux", "uy", "uz", "u_l1", "delta_v_mps", "cumulative_delta_v_mps", "state_margin", "half_space",
        "cycle", "variant",
    ];

    /// One row per step, columns in `CSV_HEADER` order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(Self::CSV_HEADER).map_err(io)?;
        let mut cumulative = 0.0;
        let stride = self.cycles.get(1).map_or(usize::MAX, |c| c.first_step);
        for s in &self.steps {
            cumulative += s.delta_v;
            let mut row = vec![
                s.step.to_string(),
                format!("{:?}", s.time),
                self.revolution_of(s.step).to_string(),
                s.phase.to_string(),
            ];
            row.extend(s.state.iter().chain(s.error.iter()).chain(s.control.iter()).map(|v| format!("{v:?}")));
            row.extend([
                format!("{:?}", s.control.lp_norm(1)),
                format!("{:?}", s.delta_v),
                format!("{cumulative:?}"),
                format!("{:?}", s.state_margin),
                format!("{:?}", s.half_space),
                (s.step / stride.max(1)).to_string(),
                self.variant.label().to_string(),
            ]);
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Reads back a log written by `write_csv`. Per-cycle solver records are
    /// not part of the file and come back empty.
    pub fn read_csv(path: &Path, orbit: &ReferenceOrbit) -> Result<MissionLog> {
        let parse = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| parse(e.to_string()))?;
        let header = r.headers().map_err(|e| parse(e.to_string()))?.clone();
        if header.iter().ne(Self::CSV_HEADER) {
            return Err(parse("unexpected header row".into()));
        }
        let mut steps = Vec::new();
        let mut variant = None;
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| parse(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| parse(format!("row {}: bad number in column {}", line + 2, Self::CSV_HEADER[i])))
            };
            let int = |i: usize| -> Result<usize> {
                rec[i].parse().map_err(|_| parse(format!("row {}: bad integer in column {}", line + 2, Self::CSV_HEADER[i])))
            };
            let vec6 = |first: usize| -> Result<State> {
                let mut v = State::zeros();
                for i in 0..6 {
                    v[i] = num(first + i)?;
                }
                Ok(v)
            };
            variant = Some(match &rec[25] {
                "euclidean-ball" => ConstraintVariant::EuclideanBall,
                "ellipsoid" => ConstraintVariant::Ellipsoid,
                other => return Err(parse(format!("row {}: unknown variant {other}", line + 2))),
            });
            steps.push(StepRecord {
                step: int(0)?,
                time: num(1)?,
                phase: int(3)?,
                state: vec6(4)?,
                error: vec6(10)?,
                control: Control::new(num(16)?, num(17)?, num(18)?),
                delta_v: num(20)?,
                state_margin: num(22)?,
                half_space: num(23)?,
            });
        }
        let variant = variant.ok_or_else(|| parse("no steps".into()))?;
        Ok(MissionLog {
            system: orbit.params.name.clone(),
            variant,
            dt: orbit.dt,
            steps_per_revolution: orbit.segments(),
            final_state: steps.last().map_or(State::zeros(), |s| s.state),
            steps,
            cycles: Vec::new(),
            failure: None,
        })
    }

    /// Multi-line human-readable digest.
    pub fn summary_text(&self, params: &SystemParams) -> String {
        let mut out = String::new();
        let revs = self.steps.len() as f64 / self.steps_per_revolution as f64;
        let years = params.time_to_days(self.steps.len() as f64 * self.dt) / 365.25;
        let total = self.total_delta_v();
        let _ = writeln!(out, "system              {}", self.system);
        let _ = writeln!(out, "variant             {}", self.variant.label());
        let _ = writeln!(out, "revolutions flown   {revs:.2}");
        let _ = writeln!(out, "solves              {}", self.cycles.len());
        let _ = writeln!(out, "total delta-v       {total:.6} m/s");
        let _ = writeln!(out, "revs 2.. delta-v    {:.6} m/s", self.delta_v_between(2, usize::MAX));
        if years > 0.0 {
            let _ = writeln!(out, "delta-v per year    {:.6} m/s/yr", total / years);
        }
        let _ = writeln!(out, "quiet steps (rev 3+) {:.1}%", 100.0 * self.quiet_fraction(3, 1e-9));
        match &self.failure {
            None => {
                let _ = writeln!(out, "status              completed");
            }
            Some(f) => {
                let _ = writeln!(out, "status              FAILED in cycle {}: {}", f.cycle, f.reason);
            }
        }
        out
    }
}

fn margins(setup: &MissionSetup<'_>, cfg: &ConstraintConfig, phase: usize, dx: &State) -> (f64, f64) {
    let state = match cfg.variant {
        ConstraintVariant::EuclideanBall => {
            let q = dx.fixed_rows::<3>(0).norm() / cfg.r_q;
            let v = dx.fixed_rows::<3>(3).norm() / cfg.r_v;
            q.max(v)
        }
        ConstraintVariant::Ellipsoid => match setup.shape {
            Some(l) => (l[phase] * dx).norm() / cfg.c.sqrt(),
            None => f64::NAN,
        },
    };
    let normal = match cfg.normal {
        HalfSpaceNormal::Manifold => setup.orbit.manifold_direction(phase),
        HalfSpaceNormal::UnstableCoordinate => setup.orbit.unstable_coordinate(phase).normalize(),
    };
    (state, normal.dot(dx))
}

/// Flies the mission. A failed solve ends the loop and is recorded in the
/// log rather than returned as an error, so the partial history survives.
pub fn run_mission(setup: MissionSetup<'_>, cfg: &MissionConfig) -> Result<MissionLog> {
    let orbit = setup.orbit;
    let params = &orbit.params;
    let n = orbit.segments();
    let constraints = cfg.constraints.nondimensional(params);
    constraints.validate()?;
    let horizon = cfg.horizon.unwrap_or(2 * n);
    let stride = cfg.stride.unwrap_or((n / 2).max(1));
    if cfg.revolutions == 0 {
        return Err(Error::InvalidArgument("at least one revolution is required".into()));
    }
    if stride == 0 || stride > horizon {
        return Err(Error::InvalidArgument(format!("stride {stride} outside [1, {horizon}]")));
    }
    let total_steps = cfg.revolutions * n;
    let mut log = MissionLog {
        system: params.name.clone(),
        variant: constraints.variant,
        dt: orbit.dt,
        steps_per_revolution: n,
        steps: Vec::with_capacity(total_steps),
        cycles: Vec::new(),
        final_state: State::zeros(),
        failure: None,
    };
    let offset_free;
    let model = match cfg.truth {
        TruthModel::Rk4 => setup.model,
        TruthModel::HighOrder => {
            offset_free = setup.model.without_offsets();
            &offset_free
        }
    };
    let mut x = inject_error(&orbit.knots[0], &cfg.injection, params);
    let mut step = 0usize;
    while step < total_steps {
        let cycle = log.cycles.len();
        let phase = orbit.phase(step);
        let problem = StationkeepingProblem {
            orbit,
            model,
            shape: setup.shape,
            phase,
            initial_error: x - orbit.knots[phase],
            horizon,
            constraints: constraints.clone(),
        };
        let maneuvers = match plan(&problem, cfg.solver) {
            Ok(p) => p,
            Err(e) => {
                log.failure = Some(MissionFailure {
                    cycle,
                    numerical: e.exit_code() == 4,
                    reason: e.to_string(),
                });
                break;
            }
        };
        log.cycles.push(CycleRecord {
            cycle,
            first_step: step,
            status: maneuvers.status,
            iterations: maneuvers.iterations,
            max_residual: maneuvers.residuals.max(),
            planned_delta_v: maneuvers.total_delta_v,
        });
        if !maneuvers.is_valid() {
            log.failure = Some(MissionFailure {
                cycle,
                reason: format!("solver returned {} ({:?})", maneuvers.status.label(), maneuvers.residuals),
                numerical: matches!(maneuvers.status, SolveStatus::NumericalFailure | SolveStatus::MaxIterations),
            });
            break;
        }
        for j in 0..stride.min(total_steps - step) {
            let phase = orbit.phase(step);
            let dx = x - orbit.knots[phase];
            let u = maneuvers.controls[j];
            let (state_margin, half_space) = margins(&setup, &constraints, phase, &dx);
            log.steps.push(StepRecord {
                step,
                time: step as f64 * orbit.dt,
                phase,
                state: x,
                error: dx,
                control: u,
                delta_v: params.velocity_to_mps(u.norm() * orbit.dt),
                state_margin,
                half_space,
            });
            let next = match cfg.truth {
                TruthModel::Rk4 => step_discrete(&x, &u, orbit.dt, params),
                TruthModel::HighOrder => step_high_order(&x, &u, orbit.dt, params, Tolerances::default()),
            };
            x = match next {
                Ok(next) => next,
                Err(e) => {
                    log.failure = Some(MissionFailure {
                        cycle,
                        reason: e.to_string(),
                        numerical: true,
                    });
                    log.final_state = x;
                    return Ok(log);
                }
            };
            step += 1;
        }
    }
    log.final_state = x;
    Ok(log)
}

/// Position of every step with a non-negligible burn, for burn-location tables.
pub fn burn_locations(log: &MissionLog, threshold: f64) -> Vec<(usize, Vector3<f64>, Control)> {
    log.steps
        .iter()
        .filter(|s| s.control.lp_norm(1) > threshold)
        .map(|s| (s.step, s.state.fixed_rows::<3>(0).into_owned(), s.control))
        .collect()
}
