//! Controlled CR3BP equations of motion in the rotating frame, the RK4
//! zero-order-hold discretisation used by the optimiser, and high-order
//! propagation with the state-transition matrix.

use std::ops::ControlFlow;

use nalgebra::{Matrix3, Matrix6, SVector, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::integrator::{Dop853, Tolerances};
use crate::system::SystemParams;

/// Position (q) followed by velocity (v), nondimensional.
pub type State = Vector6<f64>;
/// Thrust acceleration, nondimensional.
pub type Control = Vector3<f64>;
pub type Mat6 = Matrix6<f64>;

/// Distance below which a state is treated as colliding with a primary.
pub const SINGULARITY_RADIUS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<State>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Dimension(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) && times.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("trajectory times must be monotone".into()));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &State)> {
        Some((*self.times.last()?, self.states.last()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LibrationPoint {
    L1,
    L2,
    L3,
}

fn distances(q: &Vector3<f64>, mu: f64) -> Result<(f64, f64)> {
    let yz2 = q.y * q.y + q.z * q.z;
    let r1 = ((q.x + mu).powi(2) + yz2).sqrt();
    let r2 = ((q.x - 1.0 + mu).powi(2) + yz2).sqrt();
    if !(r1 >= SINGULARITY_RADIUS) {
        return Err(Error::Singularity { primary: 1, distance: r1 });
    }
    if mu > 0.0 && !(r2 >= SINGULARITY_RADIUS) {
        return Err(Error::Singularity { primary: 2, distance: r2 });
    }
    Ok((r1, r2))
}

// A massless secondary contributes nothing, even at zero distance.
fn massive(mu: f64, term: f64) -> f64 {
    if mu > 0.0 {
        term
    } else {
        0.0
    }
}

pub fn position(x: &State) -> Vector3<f64> {
    x.fixed_rows::<3>(0).into_owned()
}

pub fn velocity(x: &State) -> Vector3<f64> {
    x.fixed_rows::<3>(3).into_owned()
}

/// Augmented potential U = ½(x² + y²) + (1−μ)/r1 + μ/r2.
pub fn potential(q: &Vector3<f64>, params: &SystemParams) -> Result<f64> {
    let mu = params.mu;
    let (r1, r2) = distances(q, mu)?;
    Ok(0.5 * (q.x * q.x + q.y * q.y) + (1.0 - mu) / r1 + massive(mu, mu / r2))
}

pub fn potential_gradient(q: &Vector3<f64>, params: &SystemParams) -> Result<Vector3<f64>> {
    let mu = params.mu;
    let (r1, r2) = distances(q, mu)?;
    let a = (1.0 - mu) / r1.powi(3);
    let b = massive(mu, mu / r2.powi(3));
    Ok(Vector3::new(
        q.x - a * (q.x + mu) - b * (q.x - 1.0 + mu),
        q.y - a * q.y - b * q.y,
        -a * q.z - b * q.z,
    ))
}

/// Second derivatives of U with respect to position.
pub fn potential_hessian(q: &Vector3<f64>, params: &SystemParams) -> Result<Matrix3<f64>> {
    let mu = params.mu;
    let (r1, r2) = distances(q, mu)?;
    let a3 = (1.0 - mu) / r1.powi(3);
    let b3 = massive(mu, mu / r2.powi(3));
    let a5 = 3.0 * (1.0 - mu) / r1.powi(5);
    let b5 = massive(mu, 3.0 * mu / r2.powi(5));
    let d1 = Vector3::new(q.x + mu, q.y, q.z);
    let d2 = Vector3::new(q.x - 1.0 + mu, q.y, q.z);
    let mut h = d1 * d1.transpose() * a5 + d2 * d2.transpose() * b5;
    for i in 0..3 {
        h[(i, i)] -= a3 + b3;
    }
    h[(0, 0)] += 1.0;
    h[(1, 1)] += 1.0;
    Ok(h)
}

pub fn derivative(x: &State, u: &Control, params: &SystemParams) -> Result<State> {
    let grad = potential_gradient(&position(x), params)?;
    let (vx, vy, vz) = (x[3], x[4], x[5]);
    Ok(State::new(
        vx,
        vy,
        vz,
        grad.x + 2.0 * vy + u.x,
        grad.y - 2.0 * vx + u.y,
        grad.z + u.z,
    ))
}

/// Jacobian ∂f/∂x of the continuous dynamics (independent of the control).
pub fn state_jacobian(x: &State, params: &SystemParams) -> Result<Mat6> {
    let h = potential_hessian(&position(x), params)?;
    let mut a = Mat6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&h);
    a[(3, 4)] = 2.0;
    a[(4, 3)] = -2.0;
    Ok(a)
}

/// Jacobi integral C = 2U − |v|².
pub fn jacobi_constant(x: &State, params: &SystemParams) -> Result<f64> {
    Ok(2.0 * potential(&position(x), params)? - velocity(x).norm_squared())
}

/// Classical RK4 step with the control held constant over the step.
pub fn step_rk4(x: &State, u: &Control, dt: f64, params: &SystemParams) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("RK4 step must be positive, got {dt}")));
    }
    let k1 = derivative(x, u, params)?;
    let k2 = derivative(&(x + k1 * (0.5 * dt)), u, params)?;
    let k3 = derivative(&(x + k2 * (0.5 * dt)), u, params)?;
    let k4 = derivative(&(x + k3 * dt), u, params)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// RK4 substeps per zero-order-hold interval of the discrete map.
pub const ZOH_SUBSTEPS: usize = 4;

/// The discrete map f_d: `ZOH_SUBSTEPS` classical RK4 steps across one
/// interval of length `dt` with the control held constant. A single step
/// over a knot interval leaves a truncation error near 1e-4 in the step
/// Jacobian at 40 segments per period; four substeps bring it under 1e-6.
pub fn step_discrete(x: &State, u: &Control, dt: f64, params: &SystemParams) -> Result<State> {
    let h = dt / ZOH_SUBSTEPS as f64;
    (0..ZOH_SUBSTEPS).try_fold(*x, |x, _| step_rk4(&x, u, h, params))
}

/// x-axis equilibrium condition ∂U/∂x at (x, 0, 0).
fn collinear_residual(x: f64, mu: f64) -> f64 {
    let d1 = x + mu;
    let d2 = x - 1.0 + mu;
    x - (1.0 - mu) * d1 / d1.abs().powi(3) - mu * d2 / d2.abs().powi(3)
}

/// Position of a collinear libration point, by bisection on the x-axis
/// equilibrium condition.
pub fn collinear_point(params: &SystemParams, which: LibrationPoint) -> Result<Vector3<f64>> {
    params.validate()?;
    let mu = params.mu;
    let gap = 1e-9 * mu.min(1.0 - mu).max(1e-300).cbrt().max(1e-12);
    let (lo, hi) = match which {
        LibrationPoint::L1 => (-mu + gap, 1.0 - mu - gap),
        LibrationPoint::L2 => (1.0 - mu + gap, 2.0),
        LibrationPoint::L3 => (-2.0, -mu - gap),
    };
    let x = bisect(|x| collinear_residual(x, mu), lo, hi)?;
    Ok(Vector3::new(x, 0.0, 0.0))
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo.signum() == fhi.signum() {
        return Err(Error::Bracketing(format!(
            "no sign change on [{lo}, {hi}] (f = {flo:e}, {fhi:e})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    // pick the endpoint with the smaller residual
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

pub fn uncontrolled_rhs(params: &SystemParams) -> impl Fn(f64, &State) -> Result<State> + '_ {
    move |_t, x| derivative(x, &Control::zeros(), params)
}

/// Adaptive high-order propagation of the uncontrolled dynamics. Every
/// accepted integrator step is recorded.
pub fn propagate(
    x0: &State,
    t_span: (f64, f64),
    params: &SystemParams,
    tol: Tolerances,
) -> Result<Trajectory> {
    let rhs = uncontrolled_rhs(params);
    let mut times = Vec::new();
    let mut states = Vec::new();
    Dop853::new(tol).integrate(&rhs, t_span.0, *x0, t_span.1, |t, x| {
        times.push(t);
        states.push(*x);
        ControlFlow::Continue(())
    })?;
    Ok(Trajectory { times, states })
}

/// Propagates only the endpoint.
pub fn propagate_to(
    x0: &State,
    t_span: (f64, f64),
    params: &SystemParams,
    tol: Tolerances,
) -> Result<State> {
    let rhs = uncontrolled_rhs(params);
    let (_, x) =
        Dop853::new(tol).integrate(&rhs, t_span.0, *x0, t_span.1, |_, _| ControlFlow::Continue(()))?;
    Ok(x)
}

/// High-order counterpart of `step_rk4`: one zero-order-hold interval of
/// length `dt` integrated adaptively.
pub fn step_high_order(x: &State, u: &Control, dt: f64, params: &SystemParams, tol: Tolerances) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    let rhs = move |_t: f64, x: &State| derivative(x, u, params);
    let (_, x) = Dop853::new(tol).integrate(&rhs, 0.0, *x, dt, |_, _| ControlFlow::Continue(()))?;
    Ok(x)
}

pub type Augmented = SVector<f64, 42>;

pub fn pack(x: &State, phi: &Mat6) -> Augmented {
    let mut y = Augmented::zeros();
    y.fixed_rows_mut::<6>(0).copy_from(x);
    y.fixed_rows_mut::<36>(6).copy_from_slice(phi.as_slice());
    y
}

pub fn unpack(y: &Augmented) -> (State, Mat6) {
    let x = y.fixed_rows::<6>(0).into_owned();
    let phi = Mat6::from_column_slice(y.fixed_rows::<36>(6).as_slice());
    (x, phi)
}

/// State plus variational equation Φ̇ = (∂f/∂x) Φ.
pub fn variational_rhs(params: &SystemParams) -> impl Fn(f64, &Augmented) -> Result<Augmented> + '_ {
    move |_t, y| {
        let (x, phi) = unpack(y);
        let dx = derivative(&x, &Control::zeros(), params)?;
        let dphi = state_jacobian(&x, params)? * phi;
        Ok(pack(&dx, &dphi))
    }
}

/// Propagates state and STM jointly from Φ(t0) = I.
pub fn propagate_with_stm(
    x0: &State,
    t_span: (f64, f64),
    params: &SystemParams,
    tol: Tolerances,
) -> Result<(Trajectory, Vec<Mat6>)> {
    let rhs = variational_rhs(params);
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut stms = Vec::new();
    Dop853::new(tol).integrate(&rhs, t_span.0, pack(x0, &Mat6::identity()), t_span.1, |t, y| {
        let (x, phi) = unpack(y);
        times.push(t);
        states.push(x);
        stms.push(phi);
        ControlFlow::Continue(())
    })?;
    Ok((Trajectory { times, states }, stms))
}

/// Endpoint state and STM only.
pub fn flow_with_stm(
    x0: &State,
    t_span: (f64, f64),
    params: &SystemParams,
    tol: Tolerances,
) -> Result<(State, Mat6)> {
    let rhs = variational_rhs(params);
    let (_, y) = Dop853::new(tol).integrate(
        &rhs,
        t_span.0,
        pack(x0, &Mat6::identity()),
        t_span.1,
        |_, _| ControlFlow::Continue(()),
    )?;
    Ok(unpack(&y))
}

/// Skew form Ω preserved by the rotating-frame flow in (q, v) coordinates:
/// ΦᵀΩΦ = Ω. It is the canonical J pulled back through p = v + (−y, x, 0).
pub fn rotating_symplectic_form() -> Mat6 {
    let mut omega = Mat6::zeros();
    omega.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
    for i in 0..3 {
        omega[(3 + i, i)] = -1.0;
    }
    omega[(0, 1)] = -2.0;
    omega[(1, 0)] = 2.0;
    omega
}
