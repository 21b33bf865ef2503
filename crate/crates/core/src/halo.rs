//! Periodic halo reference orbits: initial-guess files, single-shooting
//! differential correction, knot discretisation with STMs, monodromy
//! eigen-analysis and unstable-manifold seeding.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::Path;

use nalgebra::{Complex, Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::dynamics::{
    self, flow_with_stm, pack, propagate, unpack, variational_rhs, LibrationPoint, Mat6, State,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::integrator::{dop853_step, Dop853, Tolerances};
use crate::system::SystemParams;

/// Symmetric x-z plane crossing used to seed the corrector. Values are
/// nondimensional.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub system: String,
    pub state: State,
    pub period: f64,
    pub knots: usize,
}

const STATE_KEYS: [&str; 6] = ["x0", "y0", "z0", "vx0", "vy0", "vz0"];

impl InitialGuess {
    pub fn new(system: &str, state: State, period: f64, knots: usize) -> Result<Self> {
        let guess = Self {
            system: system.to_string(),
            state,
            period,
            knots,
        };
        guess.check_crossing_form()?;
        Ok(guess)
    }

    pub fn check_crossing_form(&self) -> Result<()> {
        let s = &self.state;
        if s[1] != 0.0 || s[3] != 0.0 || s[5] != 0.0 {
            return Err(Error::NotCrossingForm(format!(
                "require y0 = vx0 = vz0 = 0, got y0={} vx0={} vz0={}",
                s[1], s[3], s[5]
            )));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::InvalidArgument(format!("period guess {} must be positive", self.period)));
        }
        if self.knots < 3 {
            return Err(Error::InvalidArgument(format!("knot count {} must be at least 3", self.knots)));
        }
        Ok(())
    }

    /// Parses the `key = value` initial-condition format. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            reason,
        };
        let mut system = None;
        let mut comps: [Option<f64>; 6] = [None; 6];
        let mut period = None;
        let mut knots = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {key}: {e}", lineno + 1)))
            };
            match key {
                "system" => system = Some(value.to_string()),
                "period" => period = Some(num()?),
                "knots" => {
                    knots = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| bad(format!("line {}: knots: {e}", lineno + 1)))?,
                    )
                }
                k => match STATE_KEYS.iter().position(|s| *s == k) {
                    Some(i) => comps[i] = Some(num()?),
                    None => return Err(bad(format!("line {}: unknown key `{k}`", lineno + 1))),
                },
            }
        }
        let mut state = State::zeros();
        for (i, c) in comps.iter().enumerate() {
            state[i] = c.ok_or_else(|| bad(format!("missing key `{}`", STATE_KEYS[i])))?;
        }
        let guess = Self {
            system: system.ok_or_else(|| bad("missing key `system`".into()))?,
            state,
            period: period.ok_or_else(|| bad("missing key `period`".into()))?,
            knots: knots.ok_or_else(|| bad("missing key `knots`".into()))?,
        };
        guess.check_crossing_form()?;
        Ok(guess)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "system = {}", self.system);
        for (k, v) in STATE_KEYS.iter().zip(self.state.iter()) {
            let _ = writeln!(out, "{k} = {v:?}");
        }
        let _ = writeln!(out, "period = {:?}", self.period);
        let _ = writeln!(out, "knots = {}", self.knots);
        out
    }
}

pub fn load_initial_guess(path: &Path) -> Result<InitialGuess> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    InitialGuess::parse(&text, path)
}

pub fn write_initial_guess(path: &Path, guess: &InitialGuess) -> Result<()> {
    std::fs::write(path, guess.to_text()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedOrbit {
    pub state: State,
    pub period: f64,
    pub iterations: usize,
    /// ‖x(T) − x0‖ after correction.
    pub closure: f64,
}

const MAX_CORRECTOR_ITERATIONS: usize = 50;

/// Propagates state and STM to the next x-z plane crossing (y = 0) after
/// `t_min`, giving up at `t_max`.
pub fn next_crossing(
    x0: &State,
    params: &SystemParams,
    tol: Tolerances,
    t_min: f64,
    t_max: f64,
) -> Result<(f64, State, Mat6)> {
    let rhs = variational_rhs(params);
    let integ = Dop853::new(tol);
    let mut prev: Option<(f64, dynamics::Augmented)> = None;
    let mut bracket: Option<(f64, dynamics::Augmented)> = None;
    integ.integrate(&rhs, 0.0, pack(x0, &Mat6::identity()), t_max, |t, y| {
        if let Some((tp, yp)) = prev {
            if tp >= t_min && yp[1] != 0.0 && yp[1].signum() != y[1].signum() {
                bracket = Some((tp, yp));
                return ControlFlow::Break(());
            }
            if t >= t_min && y[1] == 0.0 {
                bracket = Some((t, *y));
                return ControlFlow::Break(());
            }
        }
        prev = Some((t, *y));
        ControlFlow::Continue(())
    })?;
    let (t0, y0) = bracket.ok_or(Error::NoCrossing(t_max))?;
    if y0[1] == 0.0 {
        let (x, phi) = unpack(&y0);
        return Ok((t0, x, phi));
    }
    // Newton on the crossing time using single steps from the bracket start.
    let mut h = -y0[1] / y0[4];
    for _ in 0..20 {
        let y = dop853_step(&rhs, t0, &y0, h)?;
        let dh = -y[1] / y[4];
        h += dh;
        if dh.abs() < 1e-15 * (1.0 + t0.abs()) {
            break;
        }
    }
    let y = dop853_step(&rhs, t0, &y0, h)?;
    let (x, phi) = unpack(&y);
    Ok((t0 + h, x, phi))
}

/// Single-shooting correction of a symmetric halo orbit. The out-of-plane
/// amplitude z0 stays fixed; x0 and vy0 are adjusted until the half-period
/// crossing is perpendicular (vx = vz = 0).
pub fn differential_correct(
    guess: &InitialGuess,
    params: &SystemParams,
    tol: f64,
    integ_tol: Tolerances,
) -> Result<CorrectedOrbit> {
    guess.check_crossing_form()?;
    let mut x0 = guess.state;
    let mut half = 0.5 * guess.period;
    let mut last_residual = f64::INFINITY;
    for iteration in 0..=MAX_CORRECTOR_ITERATIONS {
        let (tc, xc, phi) = next_crossing(&x0, params, integ_tol, 0.25 * half, 2.0 * half)?;
        let residual = Vector2::new(xc[3], xc[5]);
        last_residual = residual.norm();
        half = tc;
        if last_residual < 1e-12 {
            let period = 2.0 * tc;
            let end = dynamics::propagate_to(&x0, (0.0, period), params, integ_tol)?;
            let closure = (end - x0).norm();
            if closure >= tol {
                return Err(Error::CorrectorStall {
                    iterations: iteration,
                    residual: closure,
                });
            }
            return Ok(CorrectedOrbit {
                state: x0,
                period,
                iterations: iteration,
                closure,
            });
        }
        if iteration == MAX_CORRECTOR_ITERATIONS {
            break;
        }
        let fc = dynamics::derivative(&xc, &dynamics::Control::zeros(), params)?;
        let rows = [3usize, 5];
        let cols = [0usize, 4];
        let mut jac = Matrix2::zeros();
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                jac[(i, j)] = phi[(r, c)] - fc[r] / xc[4] * phi[(1, c)];
            }
        }
        let step = jac.lu().solve(&(-residual)).ok_or_else(|| Error::CorrectorStall {
            iterations: iteration,
            residual: last_residual,
        })?;
        x0[0] += step[0];
        x0[4] += step[1];
    }
    Err(Error::CorrectorStall {
        iterations: MAX_CORRECTOR_ITERATIONS,
        residual: last_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Positive,
    Negative,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Positive => 1.0,
            Branch::Negative => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Branch::Positive => "+",
            Branch::Negative => "-",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceOrbit {
    pub params: SystemParams,
    pub period: f64,
    pub dt: f64,
    /// Knot states x̄_1..x̄_N, uniformly spaced in time; the last closes the orbit.
    pub knots: Vec<State>,
    /// STMs from orbit start to each knot.
    pub stms: Vec<Mat6>,
    pub monodromy: Mat6,
    pub eigenvalues: Vec<Complex<f64>>,
    pub unstable_eigenvalue: f64,
    pub unstable_direction: State,
    /// Left eigenvector ℓ of M for λ_u, scaled so that ℓᵀv_u = 1. The
    /// coordinate ℓᵀΔx at the first knot is the unstable-mode amplitude.
    pub unstable_left: State,
    pub libration_point: Vector3<f64>,
}

impl ReferenceOrbit {
    pub fn knot_count(&self) -> usize {
        self.knots.len()
    }

    /// Segments per revolution, N − 1.
    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    /// Knot index wrapped onto one revolution; knot N is identified with knot 1.
    pub fn phase(&self, k: usize) -> usize {
        k % self.segments()
    }

    pub fn knot(&self, k: usize) -> &State {
        &self.knots[self.phase(k)]
    }

    pub fn stm(&self, k: usize) -> &Mat6 {
        &self.stms[self.phase(k)]
    }

    /// Unstable direction carried to knot k, Φ_k v_u.
    pub fn propagated_direction(&self, k: usize) -> State {
        self.stm(k) * self.unstable_direction
    }

    /// Unit-length Φ_k v_u used by the half-space constraint.
    pub fn manifold_direction(&self, k: usize) -> State {
        self.propagated_direction(k).normalize()
    }

    /// ℓ carried to knot k, Φ_k⁻ᵀℓ: its inner product with Δx_k is the
    /// unstable-mode amplitude, blind to the centre and stable modes.
    pub fn unstable_coordinate(&self, k: usize) -> State {
        self.stm(k)
            .transpose()
            .lu()
            .solve(&self.unstable_left)
            .expect("state transition matrices are invertible")
    }

    pub fn closure(&self) -> f64 {
        (self.knots[self.knots.len() - 1] - self.knots[0]).norm()
    }

    /// Largest position distance of a knot from the libration point.
    pub fn max_amplitude(&self) -> f64 {
        self.knots
            .iter()
            .map(|x| (dynamics::position(x) - self.libration_point).norm())
            .fold(0.0, f64::max)
    }
}

/// Discretises one period into `knots` uniformly spaced states and computes
/// the STM at each knot, the monodromy matrix and its unstable eigenpair.
pub fn discretize(
    x0: &State,
    period: f64,
    knots: usize,
    params: &SystemParams,
    tol: Tolerances,
) -> Result<ReferenceOrbit> {
    if knots < 3 {
        return Err(Error::InvalidArgument(format!("knot count {knots} must be at least 3")));
    }
    if !(period > 0.0) {
        return Err(Error::InvalidArgument(format!("period {period} must be positive")));
    }
    let dt = period / (knots - 1) as f64;
    let rhs = variational_rhs(params);
    let integ = Dop853::new(tol);
    let mut states = Vec::with_capacity(knots);
    let mut stms = Vec::with_capacity(knots);
    let mut y = pack(x0, &Mat6::identity());
    states.push(*x0);
    stms.push(Mat6::identity());
    for k in 1..knots {
        let t0 = (k - 1) as f64 * dt;
        let t1 = if k == knots - 1 { period } else { k as f64 * dt };
        let (_, y1) = integ.integrate(&rhs, t0, y, t1, |_, _| ControlFlow::Continue(()))?;
        y = y1;
        let (x, phi) = unpack(&y);
        states.push(x);
        stms.push(phi);
    }
    let monodromy = stms[knots - 1];
    let (unstable_eigenvalue, direction) = unstable_direction(&monodromy)?;
    let eigenvalues = monodromy.complex_eigenvalues().iter().copied().collect();
    let libration_point = dynamics::collinear_point(params, LibrationPoint::L2)?;
    let mut orbit = ReferenceOrbit {
        params: params.clone(),
        period,
        dt,
        knots: states,
        stms,
        monodromy,
        eigenvalues,
        unstable_eigenvalue,
        unstable_direction: direction,
        unstable_left: State::zeros(),
        libration_point,
    };
    orient_unstable_direction(&mut orbit, tol)?;
    let (_, left) = unstable_direction(&orbit.monodromy.transpose())?;
    orbit.unstable_left = left / left.dot(&orbit.unstable_direction);
    Ok(orbit)
}

/// Largest real eigenvalue of the monodromy matrix above one and its unit
/// eigenvector (sign arbitrary here; see `orient_unstable_direction`).
pub fn unstable_direction(m: &Mat6) -> Result<(f64, State)> {
    let eig = m.complex_eigenvalues();
    let lambda = eig
        .iter()
        .filter(|z| z.im.abs() <= 1e-8 * z.norm().max(1.0))
        .map(|z| z.re)
        .filter(|re| *re > 1.0 + 1e-6)
        .fold(None, |best: Option<f64>, re| match best {
            Some(b) if b >= re => Some(b),
            _ => Some(re),
        })
        .ok_or(Error::NoUnstableEigenvalue)?;
    let shifted = m - Mat6::identity() * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::NoUnstableEigenvalue)?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc });
    let mut v: State = v_t.row(imin).transpose();
    // polish with two steps of inverse iteration
    let lu = (m - Mat6::identity() * (lambda * (1.0 + 1e-10))).lu();
    for _ in 0..2 {
        if let Some(w) = lu.solve(&v) {
            if w.iter().all(|c| c.is_finite()) && w.norm() > 0.0 {
                v = w.normalize();
            }
        }
    }
    Ok((lambda, v.normalize()))
}

/// Where a trajectory leaves a sphere around the libration point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereExit {
    pub time: f64,
    pub state: State,
    /// Smallest distance to the secondary seen before the exit.
    pub closest_secondary: f64,
    /// State where the trajectory first left the departure sphere: the
    /// boundary sphere shrunk, if needed, so that it excludes the secondary.
    /// Trajectories that swing around the secondary can leave the boundary
    /// on either side, so this is the state that tells the branch apart.
    pub departure: State,
}

impl SphereExit {
    /// Whether the trajectory departed towards +x of `center`.
    pub fn departs_positive_x(&self, center: &Vector3<f64>) -> bool {
        self.departure[0] > center.x
    }
}

/// Uncontrolled propagation until the position leaves the sphere of
/// `radius` about `center`. Returns `None` if still inside at `t_max`,
/// together with the closest approach to the secondary.
pub fn first_sphere_exit(
    x0: &State,
    params: &SystemParams,
    center: &Vector3<f64>,
    radius: f64,
    t_max: f64,
    tol: Tolerances,
) -> Result<(Option<SphereExit>, f64)> {
    let rhs = dynamics::uncontrolled_rhs(params);
    let secondary = Vector3::new(params.secondary_x(), 0.0, 0.0);
    let impact = params.secondary_radius();
    let departure_radius = radius.min((secondary - center).norm());
    let mut closest = f64::INFINITY;
    let mut exit = None;
    let mut departure = None;
    Dop853::new(tol).integrate(&rhs, 0.0, *x0, t_max, |t, x| {
        let q = dynamics::position(x);
        closest = closest.min((q - secondary).norm());
        if closest < impact {
            return ControlFlow::Break(());
        }
        let r = (q - center).norm();
        if departure.is_none() && r > departure_radius {
            departure = Some(*x);
        }
        if r > radius {
            exit = Some(SphereExit {
                time: t,
                state: *x,
                closest_secondary: closest,
                departure: departure.unwrap_or(*x),
            });
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })?;
    Ok((exit, closest))
}

/// Orients v_u so that a small +ε perturbation at the first knot leaves the
/// halo region on the +x side of the libration point.
fn orient_unstable_direction(orbit: &mut ReferenceOrbit, tol: Tolerances) -> Result<()> {
    let radius = 2.0 * orbit.max_amplitude();
    let eps = 1e-6;
    let x = orbit.knots[0] + orbit.unstable_direction * eps;
    let t_max = 8.0 * orbit.period;
    // An impact on the secondary also counts as the wrong branch.
    let (exit, _) = first_sphere_exit(&x, &orbit.params, &orbit.libration_point, radius, t_max, tol)?;
    if !matches!(exit, Some(e) if e.departs_positive_x(&orbit.libration_point)) {
        orbit.unstable_direction = -orbit.unstable_direction;
    }
    Ok(())
}

#[derive(Debug)]
pub struct ManifoldTrajectory {
    pub departure_knot: usize,
    pub branch: Branch,
    pub epsilon: f64,
    pub initial_state: State,
    pub trajectory: Result<Trajectory>,
}

/// Seeds x̄_k ± ε Φ_k v_u at every `stride`-th knot of one revolution and
/// propagates each for `tau` without control.
pub fn manifold_trajectories(
    orbit: &ReferenceOrbit,
    epsilon: f64,
    branch: Branch,
    tau: f64,
    stride: usize,
    tol: Tolerances,
) -> Result<Vec<ManifoldTrajectory>> {
    if !(epsilon >= 0.0) || !(tau > 0.0) || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "manifold seeding needs ε ≥ 0, τ > 0, stride ≥ 1 (got {epsilon}, {tau}, {stride})"
        )));
    }
    let ks: Vec<usize> = (0..orbit.segments()).step_by(stride).collect();
    Ok(ks
        .into_par_iter()
        .map(|k| {
            let x = orbit.knots[k] + orbit.propagated_direction(k) * (branch.sign() * epsilon);
            ManifoldTrajectory {
                departure_knot: k,
                branch,
                epsilon,
                initial_state: x,
                trajectory: propagate(&x, (0.0, tau), &orbit.params, tol),
            }
        })
        .collect())
}

/// Full pipeline from an initial guess to a discretised reference orbit.
pub fn build_reference_orbit(
    guess: &InitialGuess,
    params: &SystemParams,
    corrector_tol: f64,
    tol: Tolerances,
) -> Result<(CorrectedOrbit, ReferenceOrbit)> {
    let corrected = differential_correct(guess, params, corrector_tol, tol)?;
    let orbit = discretize(&corrected.state, corrected.period, guess.knots, params, tol)?;
    Ok((corrected, orbit))
}

/// Segment STM from knot k to k+1 by fresh integration, Φ(t_k → t_{k+1}).
pub fn segment_stm(orbit: &ReferenceOrbit, k: usize, tol: Tolerances) -> Result<Mat6> {
    let (_, phi) = flow_with_stm(orbit.knot(k), (0.0, orbit.dt), &orbit.params, tol)?;
    Ok(phi)
}
