//! Fuel-optimal stationkeeping program over a receding horizon.
//!
//! Decision variables are the predicted errors Δx_1..Δx_{H+1}, the controls
//! u_1..u_H and an L1 epigraph slack t_k per control. Everything is scaled
//! before it reaches the solver so that a single absolute tolerance means the
//! same thing for an injection transient and for steady-state trimming.

use serde::{Deserialize, Serialize};

use crate::conic::{solve, Cone, ConicProgram, ConicSolution, Residuals, SolveStatus, SolverSettings, SparseMatrix};
use crate::dynamics::{Control, Mat6, State};
use crate::error::{Error, Result};
use crate::halo::ReferenceOrbit;
use crate::linearize::LinearizedModel;
use crate::system::SystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintVariant {
    EuclideanBall,
    Ellipsoid,
}

impl ConstraintVariant {
    pub fn label(self) -> &'static str {
        match self {
            ConstraintVariant::EuclideanBall => "euclidean-ball",
            ConstraintVariant::Ellipsoid => "ellipsoid",
        }
    }
}

/// Unit system of the radii and of the half-space level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintUnits {
    /// Radii in LU and LU/TU, `a` on the unit-normalised direction.
    #[default]
    Nondimensional,
    /// r_q in metres, r_v in m/s, `a` in metres (divided by the length unit).
    Metric,
}

/// Normal of the half-space constraint at each knot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HalfSpaceNormal {
    /// Φ_k v_u / ‖Φ_k v_u‖, the manifold tangent.
    #[default]
    Manifold,
    /// Φ_k⁻ᵀℓ / ‖Φ_k⁻ᵀℓ‖, which measures only the unstable-mode amplitude.
    UnstableCoordinate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub variant: ConstraintVariant,
    #[serde(default)]
    pub units: ConstraintUnits,
    /// Position radius; `inf` removes the cone.
    pub r_q: f64,
    /// Velocity radius; `inf` removes the cone.
    pub r_v: f64,
    /// Cost-to-go level for the ellipsoid variant.
    pub c: f64,
    pub a: f64,
    pub half_space: bool,
    #[serde(default)]
    pub normal: HalfSpaceNormal,
    /// Knots after the initial state that carry no state or half-space
    /// constraint, giving the plan room to absorb a large initial error.
    #[serde(default)]
    pub free_steps: usize,
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_q > 0.0) || !(self.r_v > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "radii must be positive, got r_q = {} and r_v = {}",
                self.r_q, self.r_v
            )));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidArgument(format!("cost-to-go level must be positive, got {}", self.c)));
        }
        if !self.a.is_finite() {
            return Err(Error::InvalidArgument("half-space level must be finite".into()));
        }
        Ok(())
    }

    /// Radii and level converted to nondimensional units.
    pub fn nondimensional(&self, params: &SystemParams) -> ConstraintConfig {
        match self.units {
            ConstraintUnits::Nondimensional => self.clone(),
            ConstraintUnits::Metric => ConstraintConfig {
                units: ConstraintUnits::Nondimensional,
                r_q: params.meters_to_length(self.r_q),
                r_v: params.mps_to_velocity(self.r_v),
                a: params.meters_to_length(self.a),
                ..self.clone()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationkeepingProblem<'a> {
    pub orbit: &'a ReferenceOrbit,
    pub model: &'a LinearizedModel,
    /// Upper Cholesky factors of the cost-to-go, required for the ellipsoid.
    pub shape: Option<&'a [Mat6]>,
    /// Reference phase of Δx_1.
    pub phase: usize,
    pub initial_error: State,
    pub horizon: usize,
    /// Must already be nondimensional.
    pub constraints: ConstraintConfig,
}

/// Column layout of the assembled program.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub horizon: usize,
    /// Scale of Δx: Δx = scale · x̃.
    pub state_scale: f64,
    /// Scale of u and t: u = control_scale · ũ.
    pub control_scale: f64,
}

impl Layout {
    pub fn state(&self, j: usize) -> usize {
        6 * j
    }
    pub fn control(&self, j: usize) -> usize {
        6 * (self.horizon + 1) + 3 * j
    }
    pub fn slack(&self, j: usize) -> usize {
        6 * (self.horizon + 1) + 3 * self.horizon + 3 * j
    }
    pub fn num_vars(&self) -> usize {
        6 * (self.horizon + 1) + 6 * self.horizon
    }
}

impl StationkeepingProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        self.constraints.validate()?;
        if self.constraints.units != ConstraintUnits::Nondimensional {
            return Err(Error::InvalidArgument("constraints must be converted to nondimensional units".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least one step".into()));
        }
        if !self.initial_error.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("initial error is not finite".into()));
        }
        if self.model.segments() != self.orbit.segments() {
            return Err(Error::Dimension(format!(
                "model has {} segments, orbit has {}",
                self.model.segments(),
                self.orbit.segments()
            )));
        }
        if self.constraints.variant == ConstraintVariant::Ellipsoid {
            match self.shape {
                None => return Err(Error::InvalidArgument("ellipsoid variant needs the cost-to-go".into())),
                Some(s) if s.len() < self.orbit.segments() => {
                    return Err(Error::Dimension(format!("{} cost-to-go factors for {} segments", s.len(), self.orbit.segments())))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Unit normal d_k of the half-space at phase k.
    pub fn half_space_normal(&self, phase: usize) -> State {
        match self.constraints.normal {
            HalfSpaceNormal::Manifold => self.orbit.manifold_direction(phase),
            HalfSpaceNormal::UnstableCoordinate => self.orbit.unstable_coordinate(phase).normalize(),
        }
    }

    /// Index (0-based, Δx_1 is 0) of the first knot carrying state constraints.
    fn first_constrained(&self) -> usize {
        (1 + self.constraints.free_steps).min(self.horizon)
    }

    /// Phase of horizon knot j (j = 0 is Δx_1).
    fn knot_phase(&self, j: usize) -> usize {
        self.orbit.phase(self.phase + j)
    }

    fn layout(&self) -> Layout {
        let c = &self.constraints;
        let mut scale = self.initial_error.amax();
        if c.half_space {
            scale = scale.max(c.a.abs());
        }
        if scale == 0.0 {
            scale = [c.r_q, c.r_v].into_iter().filter(|r| r.is_finite()).fold(1e-6, f64::min);
        }
        Layout {
            horizon: self.horizon,
            state_scale: scale,
            control_scale: scale / self.model.dt,
        }
    }

    /// Builds the scaled conic program. State constraints apply to knots
    /// 2..H+1; Δx_1 is pinned to the measured error and cannot be changed.
    pub fn assemble(&self) -> Result<(ConicProgram, Layout)> {
        self.validate()?;
        let lay = self.layout();
        let h_len = self.horizon;
        let s = lay.state_scale;
        let cfg = &self.constraints;
        let mut trip: Vec<(usize, usize, f64)> = Vec::new();
        let mut h: Vec<f64> = Vec::new();
        let mut cones: Vec<Cone> = Vec::new();
        let mut row = 0usize;

        // Zero cone: initial condition and dynamics.
        for i in 0..6 {
            trip.push((row + i, lay.state(0) + i, 1.0));
            h.push(self.initial_error[i] / s);
        }
        row += 6;
        let b_scale = lay.control_scale / s;
        for j in 0..h_len {
            let (a, b) = self.model.at(self.knot_phase(j));
            let offset = self.model.offset(self.knot_phase(j));
            for i in 0..6 {
                trip.push((row + i, lay.state(j + 1) + i, 1.0));
                for m in 0..6 {
                    trip.push((row + i, lay.state(j) + m, -a[(i, m)]));
                }
                for m in 0..3 {
                    trip.push((row + i, lay.control(j) + m, -b[(i, m)] * b_scale));
                }
                h.push(offset[i] / s);
            }
            row += 6;
        }
        cones.push(Cone::Zero(row));

        // Nonnegative cone: L1 epigraph and half-space.
        let nonneg_start = row;
        for j in 0..h_len {
            for m in 0..3 {
                trip.push((row, lay.control(j) + m, 1.0));
                trip.push((row, lay.slack(j) + m, -1.0));
                trip.push((row + 1, lay.control(j) + m, -1.0));
                trip.push((row + 1, lay.slack(j) + m, -1.0));
                h.extend([0.0, 0.0]);
                row += 2;
            }
        }
        if cfg.half_space {
            for j in self.first_constrained()..=h_len {
                let d = self.half_space_normal(self.knot_phase(j));
                for i in 0..6 {
                    trip.push((row, lay.state(j) + i, -d[i]));
                }
                h.push(-cfg.a / s);
                row += 1;
            }
        }
        cones.push(Cone::Nonnegative(row - nonneg_start));

        // Second-order cones on the state error.
        for j in self.first_constrained()..=h_len {
            match cfg.variant {
                ConstraintVariant::EuclideanBall => {
                    for (offset, radius) in [(0usize, cfg.r_q), (3, cfg.r_v)] {
                        if !radius.is_finite() {
                            continue;
                        }
                        h.push(radius / s);
                        for i in 0..3 {
                            trip.push((row + 1 + i, lay.state(j) + offset + i, -1.0));
                            h.push(0.0);
                        }
                        cones.push(Cone::SecondOrder(4));
                        row += 4;
                    }
                }
                ConstraintVariant::Ellipsoid => {
                    let shape = self.shape.expect("validated");
                    // the cone is invariant under positive scaling, so
                    // normalise the block to unit largest entry
                    let l = &shape[self.knot_phase(j)];
                    let norm = l.amax();
                    h.push(cfg.c.sqrt() / (s * norm));
                    for i in 0..6 {
                        for m in 0..6 {
                            if l[(i, m)] != 0.0 {
                                trip.push((row + 1 + i, lay.state(j) + m, -l[(i, m)] / norm));
                            }
                        }
                        h.push(0.0);
                    }
                    cones.push(Cone::SecondOrder(7));
                    row += 7;
                }
            }
        }

        let mut c = vec![0.0; lay.num_vars()];
        for v in c.iter_mut().skip(lay.slack(0)) {
            *v = 1.0;
        }
        let g = SparseMatrix::from_triplets(row, lay.num_vars(), trip)?;
        Ok((ConicProgram::new(c, g, h, cones)?, lay))
    }

    /// Largest violation of the linear dynamics and state constraints by a
    /// plan, each relative to the scale of the quantity it bounds.
    pub fn constraint_violation(&self, plan: &ManeuverPlan) -> f64 {
        let cfg = &self.constraints;
        let dx = &plan.predicted;
        let mut worst = (dx[0] - self.initial_error).amax() / self.layout().state_scale;
        for j in 0..self.horizon {
            let (a, b) = self.model.at(self.knot_phase(j));
            let pred = a * dx[j] + b * plan.controls[j] + self.model.offset(self.knot_phase(j));
            worst = worst.max((dx[j + 1] - pred).amax() / (1e-300 + pred.amax().max(self.layout().state_scale)));
        }
        for j in self.first_constrained()..=self.horizon {
            let x = &dx[j];
            if cfg.half_space {
                let d = self.half_space_normal(self.knot_phase(j));
                worst = worst.max((cfg.a - d.dot(x)) / cfg.a.abs().max(self.layout().state_scale));
            }
            match cfg.variant {
                ConstraintVariant::EuclideanBall => {
                    if cfg.r_q.is_finite() {
                        worst = worst.max((x.fixed_rows::<3>(0).norm() - cfg.r_q) / cfg.r_q);
                    }
                    if cfg.r_v.is_finite() {
                        worst = worst.max((x.fixed_rows::<3>(3).norm() - cfg.r_v) / cfg.r_v);
                    }
                }
                ConstraintVariant::Ellipsoid => {
                    let l = &self.shape.expect("validated")[self.knot_phase(j)];
                    let root_c = cfg.c.sqrt();
                    worst = worst.max(((l * x).norm() - root_c) / root_c);
                }
            }
        }
        worst.max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct ManeuverPlan {
    pub controls: Vec<Control>,
    /// Δx_1..Δx_{H+1}.
    pub predicted: Vec<State>,
    /// ‖u_k‖₂·dt per step, m/s.
    pub delta_v: Vec<f64>,
    pub total_delta_v: f64,
    pub objective: f64,
    pub status: SolveStatus,
    pub residuals: Residuals,
    pub iterations: u32,
}

impl ManeuverPlan {
    pub fn is_valid(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Unscales the primal solution into controls, predicted errors and delta-v.
pub fn extract_plan(layout: &Layout, solution: &ConicSolution, dt: f64, params: &SystemParams) -> ManeuverPlan {
    let z = &solution.z;
    let predicted: Vec<State> = (0..=layout.horizon)
        .map(|j| State::from_iterator(z[layout.state(j)..layout.state(j) + 6].iter().map(|v| v * layout.state_scale)))
        .collect();
    let controls: Vec<Control> = (0..layout.horizon)
        .map(|j| {
            Control::from_iterator(z[layout.control(j)..layout.control(j) + 3].iter().map(|v| v * layout.control_scale))
        })
        .collect();
    let delta_v: Vec<f64> = controls.iter().map(|u| params.velocity_to_mps(u.norm() * dt)).collect();
    ManeuverPlan {
        total_delta_v: delta_v.iter().sum(),
        objective: solution.objective * layout.control_scale,
        controls,
        predicted,
        delta_v,
        status: solution.status,
        residuals: solution.residuals,
        iterations: solution.iterations,
    }
}

/// Assemble, solve and extract in one call.
pub fn plan(problem: &StationkeepingProblem<'_>, settings: SolverSettings) -> Result<ManeuverPlan> {
    let (program, layout) = problem.assemble()?;
    let solution = solve(&program, settings)?;
    Ok(extract_plan(&layout, &solution, problem.model.dt, &problem.orbit.params))
}
