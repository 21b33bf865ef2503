//! Periodic discrete Riccati recursion. The converged cost-to-go matrices
//! shape the ellipsoidal state-error constraint; the LQR gains themselves are
//! not used.

use nalgebra::{Matrix3, Matrix6, Matrix6x3};

use crate::dynamics::Mat6;
use crate::error::{Error, Result};
use crate::linearize::LinearizedModel;

#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: Matrix6<f64>,
    pub r: Matrix3<f64>,
    pub q_terminal: Matrix6<f64>,
}

impl CostWeights {
    /// Scaled identities Q = Q_N = q·I₆, R = r·I₃.
    pub fn isotropic(q: f64, r: f64) -> Self {
        Self {
            q: Matrix6::identity() * q,
            r: Matrix3::identity() * r,
            q_terminal: Matrix6::identity() * q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sym = |m: &Matrix6<f64>| (m - m.transpose()).norm() <= 1e-12 * m.norm().max(1.0);
        if !sym(&self.q) || !sym(&self.q_terminal) {
            return Err(Error::InvalidArgument("state weights must be symmetric".into()));
        }
        let psd = |m: &Matrix6<f64>| m.symmetric_eigenvalues().iter().all(|e| *e >= -1e-12);
        if !psd(&self.q) || !psd(&self.q_terminal) {
            return Err(Error::InvalidArgument("state weights must be positive semidefinite".into()));
        }
        if (self.r - self.r.transpose()).norm() > 1e-12 * self.r.norm() || self.r.cholesky().is_none() {
            return Err(Error::InvalidArgument("control weight must be symmetric positive definite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CostToGo {
    /// P_1..P_N; P_N equals P_1.
    pub p: Vec<Mat6>,
    /// Full-period passes performed (a doubling step counts as one).
    pub periods: usize,
    /// Periods of plain recursion the result corresponds to.
    pub equivalent_periods: u64,
    /// Relative change of the last full backward sweep.
    pub final_change: f64,
}

impl CostToGo {
    pub fn at(&self, k: usize) -> &Mat6 {
        &self.p[k % (self.p.len() - 1)]
    }
}

fn riccati_step(p_next: &Mat6, a: &Mat6, b: &Matrix6x3<f64>, w: &CostWeights) -> Result<Mat6> {
    let pa = p_next * a;
    let pb = p_next * b;
    let s = w.r + b.transpose() * pb;
    let gain = s
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("R + BᵀPB is not positive definite".into()))?
        .solve(&(pb.transpose() * a));
    let p = w.q + a.transpose() * pa - a.transpose() * pb * gain;
    Ok((p + p.transpose()) * 0.5)
}

/// Iterates the backward Riccati recursion over whole periods, seeded with
/// the terminal weight, until the maximum relative Frobenius change over all
/// knots drops below `tol`. One pass per period; see `periodic_riccati` for
/// the accelerated version.
pub fn periodic_riccati_sweeps(
    model: &LinearizedModel,
    weights: &CostWeights,
    tol: f64,
    max_periods: usize,
) -> Result<CostToGo> {
    model.validate()?;
    weights.validate()?;
    let n = model.segments();
    let mut p: Vec<Mat6> = vec![Mat6::zeros(); n + 1];
    p[n] = weights.q_terminal;
    let mut first = true;
    let mut change = f64::INFINITY;
    for period in 1..=max_periods {
        let mut worst: f64 = 0.0;
        for k in (0..n).rev() {
            let updated = riccati_step(&p[k + 1], &model.a[k], &model.b[k], weights)?;
            if !first {
                let old = p[k].norm();
                let diff = (updated - p[k]).norm();
                worst = worst.max(if old > 0.0 { diff / old } else { diff });
            }
            p[k] = updated;
        }
        let wrap = (p[0] - p[n]).norm();
        worst = worst.max(if p[n].norm() > 0.0 { wrap / p[n].norm() } else { wrap });
        p[n] = p[0];
        change = worst;
        if !first && change < tol {
            return Ok(CostToGo {
                p,
                periods: period,
                equivalent_periods: period as u64,
                final_change: change,
            });
        }
        first = false;
    }
    Err(Error::RiccatiNonConvergence {
        periods: max_periods,
        change,
    })
}

/// The Riccati step written as a linear-fractional map
/// X ↦ H + Aᵀ X (I + G X)⁻¹ A with G = B R⁻¹ Bᵀ.
#[derive(Debug, Clone, Copy)]
struct RiccatiMap {
    a: Mat6,
    g: Mat6,
    h: Mat6,
}

impl RiccatiMap {
    fn step(a: &Mat6, b: &Matrix6x3<f64>, w: &CostWeights) -> Result<Self> {
        let r_inv = w
            .r
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("R is not positive definite".into()))?
            .inverse();
        Ok(Self {
            a: *a,
            g: b * r_inv * b.transpose(),
            h: w.q,
        })
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    fn after(&self, inner: &RiccatiMap) -> Result<Self> {
        let m = (Mat6::identity() + self.g * inner.h)
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("singular Riccati composition".into()))?;
        let sym = |x: Mat6| (x + x.transpose()) * 0.5;
        Ok(Self {
            a: inner.a * m * self.a,
            g: sym(inner.g + inner.a * m * self.g * inner.a.transpose()),
            h: sym(self.h + self.a.transpose() * inner.h * m * self.a),
        })
    }

    fn apply(&self, x: &Mat6) -> Result<Mat6> {
        let y = (Mat6::identity() + self.g * x)
            .lu()
            .solve(&self.a)
            .ok_or_else(|| Error::InvalidArgument("singular Riccati map".into()))?;
        let p = self.h + self.a.transpose() * x * y;
        Ok((p + p.transpose()) * 0.5)
    }
}

fn relative_change(new: &Mat6, old: &Mat6) -> f64 {
    let diff = (new - old).norm();
    if old.norm() > 0.0 {
        diff / old.norm()
    } else {
        diff
    }
}

/// Periodic cost-to-go seeded with the terminal weight, accelerated by
/// doubling: the whole-period map is composed once, then squared, so that
/// after j doublings P_1 is the plain recursion's iterate after 2^j periods.
/// Once successive doublings agree to `tol`, ordinary backward sweeps fill in
/// every knot and confirm the fixed point with the same relative-change test
/// as `periodic_riccati_sweeps`. `max_periods` caps the number of passes.
pub fn periodic_riccati(
    model: &LinearizedModel,
    weights: &CostWeights,
    tol: f64,
    max_periods: usize,
) -> Result<CostToGo> {
    model.validate()?;
    weights.validate()?;
    let n = model.segments();
    let mut period_map = RiccatiMap::step(&model.a[n - 1], &model.b[n - 1], weights)?;
    for k in (0..n - 1).rev() {
        period_map = RiccatiMap::step(&model.a[k], &model.b[k], weights)?.after(&period_map)?;
    }
    let mut passes = 1;
    let mut equivalent: u64 = 1;
    let mut head = period_map.apply(&weights.q_terminal)?;
    let mut change = f64::INFINITY;
    let mut doubled = period_map;
    while passes < max_periods {
        doubled = doubled.after(&doubled)?;
        passes += 1;
        equivalent *= 2;
        let next = doubled.apply(&weights.q_terminal)?;
        change = relative_change(&next, &head);
        head = next;
        if change < tol || equivalent >= 1 << 40 {
            break;
        }
    }
    // Fill in the knots and verify with plain sweeps.
    let mut p: Vec<Mat6> = vec![Mat6::zeros(); n + 1];
    p[n] = head;
    let mut first = true;
    while passes < max_periods {
        passes += 1;
        let mut worst: f64 = 0.0;
        for k in (0..n).rev() {
            let updated = riccati_step(&p[k + 1], &model.a[k], &model.b[k], weights)?;
            if !first {
                worst = worst.max(relative_change(&updated, &p[k]));
            }
            p[k] = updated;
        }
        worst = worst.max(relative_change(&p[0], &p[n]));
        p[n] = p[0];
        change = worst;
        if change < tol {
            return Ok(CostToGo {
                p,
                periods: passes,
                equivalent_periods: equivalent + passes as u64,
                final_change: change,
            });
        }
        first = false;
    }
    Err(Error::RiccatiNonConvergence {
        periods: max_periods,
        change,
    })
}

/// Upper-triangular factors L_k with L_kᵀL_k = P_k, so that
/// Δxᵀ P_k Δx ≤ c becomes ‖L_k Δx‖ ≤ √c.
pub fn ellipsoid_shape(ctg: &CostToGo) -> Result<Vec<Mat6>> {
    ctg.p
        .iter()
        .enumerate()
        .map(|(k, p)| {
            p.cholesky()
                .map(|c| c.l().transpose())
                .ok_or(Error::NotPositiveDefinite(k))
        })
        .collect()
}
