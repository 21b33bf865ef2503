//! Jacobians of the RK4 zero-order-hold step along the reference orbit.

use nalgebra::{Matrix6x3, SMatrix};
use rayon::prelude::*;

use crate::dynamics::{derivative, state_jacobian, Control, Mat6, State, ZOH_SUBSTEPS};
use crate::error::{Error, Result};
use crate::halo::ReferenceOrbit;
use crate::system::SystemParams;

pub type Mat63 = Matrix6x3<f64>;

#[derive(Debug, Clone)]
pub struct LinearizedModel {
    /// A_k = ∂f_d/∂x at knot k, one per segment.
    pub a: Vec<Mat6>,
    /// B_k = ∂f_d/∂u at knot k.
    pub b: Vec<Mat63>,
    /// c_k = f_d(x̄_k, 0) − x̄_{k+1}: how far the discrete map misses the next
    /// knot. Zero for a reference that is an exact orbit of f_d.
    pub offsets: Vec<State>,
    pub dt: f64,
}

impl LinearizedModel {
    pub fn segments(&self) -> usize {
        self.a.len()
    }

    /// Same model with the one-step offsets zeroed.
    pub fn without_offsets(&self) -> Self {
        Self {
            offsets: vec![State::zeros(); self.a.len()],
            ..self.clone()
        }
    }

    /// Jacobians for horizon step k, wrapping periodically.
    pub fn at(&self, k: usize) -> (&Mat6, &Mat63) {
        let i = k % self.a.len();
        (&self.a[i], &self.b[i])
    }

    pub fn offset(&self, k: usize) -> &State {
        &self.offsets[k % self.offsets.len()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.is_empty() || self.a.len() != self.b.len() || self.a.len() != self.offsets.len() {
            return Err(Error::Dimension(format!(
                "{} state Jacobians for {} control Jacobians",
                self.a.len(),
                self.b.len()
            )));
        }
        let finite = self.a.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && self.b.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && self.offsets.iter().all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidArgument("non-finite Jacobian entry".into()));
        }
        Ok(())
    }
}

fn control_input() -> Mat63 {
    let mut g = Mat63::zeros();
    g.fixed_view_mut::<3, 3>(3, 0).fill_with_identity();
    g
}

/// Exact chain-rule differentiation of one RK4 step with the control held
/// constant: returns (f_d(x, u), ∂f_d/∂x, ∂f_d/∂u).
pub fn rk4_jacobians(
    x: &State,
    u: &Control,
    dt: f64,
    params: &SystemParams,
) -> Result<(State, Mat6, Mat63)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    let g = control_input();
    let eye = Mat6::identity();
    let half = 0.5 * dt;

    let k1 = derivative(x, u, params)?;
    let x2 = x + k1 * half;
    let k2 = derivative(&x2, u, params)?;
    let x3 = x + k2 * half;
    let k3 = derivative(&x3, u, params)?;
    let x4 = x + k3 * dt;
    let k4 = derivative(&x4, u, params)?;

    let j1 = state_jacobian(x, params)?;
    let j2 = state_jacobian(&x2, params)?;
    let j3 = state_jacobian(&x3, params)?;
    let j4 = state_jacobian(&x4, params)?;

    let dk1 = j1;
    let dk2 = j2 * (eye + dk1 * half);
    let dk3 = j3 * (eye + dk2 * half);
    let dk4 = j4 * (eye + dk3 * dt);

    let dk1u = g;
    let dk2u = j2 * (dk1u * half) + g;
    let dk3u = j3 * (dk2u * half) + g;
    let dk4u = j4 * (dk3u * dt) + g;

    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    let a = eye + (dk1 + dk2 * 2.0 + dk3 * 2.0 + dk4) * (dt / 6.0);
    let b: SMatrix<f64, 6, 3> = (dk1u + dk2u * 2.0 + dk3u * 2.0 + dk4u) * (dt / 6.0);
    Ok((next, a, b))
}

/// Value and Jacobians of the discrete map `step_discrete`, by chaining the
/// exact RK4 step Jacobians over its substeps.
pub fn discrete_step_jacobians(
    x: &State,
    u: &Control,
    dt: f64,
    params: &SystemParams,
) -> Result<(State, Mat6, Mat63)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    let h = dt / ZOH_SUBSTEPS as f64;
    let mut next = *x;
    let mut a = Mat6::identity();
    let mut b = Mat63::zeros();
    for _ in 0..ZOH_SUBSTEPS {
        let (y, ai, bi) = rk4_jacobians(&next, u, h, params)?;
        next = y;
        a = ai * a;
        b = ai * b + bi;
    }
    Ok((next, a, b))
}

/// A_k, B_k and the offsets c_k of f_d at every knot of one revolution,
/// linearised at u = 0.
pub fn discrete_jacobians(orbit: &ReferenceOrbit) -> Result<LinearizedModel> {
    let parts: Result<Vec<(Mat6, Mat63, State)>> = (0..orbit.segments())
        .into_par_iter()
        .map(|k| {
            let (next, a, b) = discrete_step_jacobians(&orbit.knots[k], &Control::zeros(), orbit.dt, &orbit.params)?;
            Ok((a, b, next - orbit.knots[k + 1]))
        })
        .collect();
    let parts = parts?;
    let model = LinearizedModel {
        a: parts.iter().map(|p| p.0).collect(),
        b: parts.iter().map(|p| p.1).collect(),
        offsets: parts.iter().map(|p| p.2).collect(),
        dt: orbit.dt,
    };
    model.validate()?;
    Ok(model)
}
