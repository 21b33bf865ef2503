//! Sparse conic programs over zero, nonnegative and second-order cones.
//!
//! Standard form:
//!
//! ```text
//! minimize    cᵀz
//! subject to  Gz + s = h,   s ∈ K = K_1 × … × K_p
//! ```
//!
//! The interior-point iterations are delegated to Clarabel. Every returned
//! solution is re-certified here from the raw problem data, so the status
//! `Optimal` always means the KKT residuals below were checked independently.

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    Nonnegative(usize),
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::Nonnegative(d) | Cone::SecondOrder(d) => d,
        }
    }

    fn keyword(&self) -> &'static str {
        match self {
            Cone::Zero(_) => "zero",
            Cone::Nonnegative(_) => "nonneg",
            Cone::SecondOrder(_) => "soc",
        }
    }

    /// Distance-like violation of membership (zero when inside).
    fn violation(&self, v: &[f64]) -> f64 {
        match self {
            Cone::Zero(_) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Cone::Nonnegative(_) => v.iter().fold(0.0, |m, x| m.max(-x)),
            Cone::SecondOrder(_) => {
                let tail = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                (tail - v[0]).max(0.0)
            }
        }
    }

    /// Violation of membership in the dual cone.
    fn dual_violation(&self, v: &[f64]) -> f64 {
        match self {
            // dual of {0} is everything
            Cone::Zero(_) => 0.0,
            _ => self.violation(v),
        }
    }
}

/// Compressed-column sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::Dimension(format!("entry ({r}, {c}) outside {rows}×{cols}")));
        }
        triplets.sort_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; cols + 1];
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
                continue;
            }
            row_idx.push(r);
            values.push(v);
            col_ptr[c + 1] += 1;
            last = Some((r, c));
        }
        for c in 0..cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut m = Self {
            rows,
            cols,
            col_ptr,
            row_idx,
            values,
        };
        m.drop_zeros();
        Ok(m)
    }

    fn drop_zeros(&mut self) {
        let mut col_ptr = vec![0usize; self.cols + 1];
        let mut row_idx = Vec::with_capacity(self.values.len());
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.cols {
            for i in self.col_ptr[c]..self.col_ptr[c + 1] {
                if self.values[i] != 0.0 {
                    row_idx.push(self.row_idx[i]);
                    values.push(self.values[i]);
                }
            }
            col_ptr[c + 1] = values.len();
        }
        self.col_ptr = col_ptr;
        self.row_idx = row_idx;
        self.values = values;
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.cols).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |i| (self.row_idx[i], c, self.values[i]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for (r, c, v) in self.triplets() {
            y[r] += v * x[c];
        }
        y
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.cols];
        for (r, c, v) in self.triplets() {
            x[c] += v * y[r];
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub c: Vec<f64>,
    pub g: SparseMatrix,
    pub h: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn new(c: Vec<f64>, g: SparseMatrix, h: Vec<f64>, cones: Vec<Cone>) -> Result<Self> {
        let p = Self { c, g, h, cones };
        p.validate()?;
        Ok(p)
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.h.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m: usize = self.cones.iter().map(Cone::dim).sum();
        if m != self.h.len() || self.g.rows != m {
            return Err(Error::Dimension(format!(
                "cone dimensions sum to {m}, h has {} rows, G has {}",
                self.h.len(),
                self.g.rows
            )));
        }
        if self.g.cols != self.c.len() {
            return Err(Error::Dimension(format!(
                "G has {} columns for {} variables",
                self.g.cols,
                self.c.len()
            )));
        }
        if let Some(cone) = self.cones.iter().find(|k| matches!(k, Cone::SecondOrder(d) if *d < 2)) {
            return Err(Error::Dimension(format!("second-order cone of dimension {}", cone.dim())));
        }
        if self.cones.iter().any(|k| k.dim() == 0) {
            return Err(Error::Dimension("empty cone".into()));
        }
        let finite = self.c.iter().chain(&self.h).chain(&self.g.values).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite program data".into()));
        }
        Ok(())
    }

    /// Plain-text dump: header, objective, offsets, cone layout, then one
    /// `row col value` line per nonzero of G.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "conic-program 1");
        let _ = writeln!(out, "vars {} rows {} nnz {}", self.num_vars(), self.num_rows(), self.g.nnz());
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "c {}", join(&self.c));
        let _ = writeln!(out, "h {}", join(&self.h));
        let cones: Vec<String> = self.cones.iter().map(|k| format!("{}:{}", k.keyword(), k.dim())).collect();
        let _ = writeln!(out, "cones {}", cones.join(" "));
        for (r, c, v) in self.g.triplets() {
            let _ = writeln!(out, "{r} {c} {v:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            path: "<conic program>".into(),
            reason: msg.to_string(),
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("conic-program 1") {
            return Err(bad("missing `conic-program 1` header"));
        }
        let dims: Vec<&str> = lines.next().ok_or_else(|| bad("missing size line"))?.split_whitespace().collect();
        if dims.len() != 6 || dims[0] != "vars" || dims[2] != "rows" || dims[4] != "nnz" {
            return Err(bad("malformed size line"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let (n, m, nnz) = (num(dims[1])?, num(dims[3])?, num(dims[5])?);
        let mut floats = |tag: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(tag) {
                return Err(bad(&format!("expected `{tag}` line")));
            }
            it.map(|s| s.parse::<f64>().map_err(|_| bad("bad float"))).collect()
        };
        let c = floats("c")?;
        let h = floats("h")?;
        let cone_line = lines.next().ok_or_else(|| bad("truncated"))?;
        let mut it = cone_line.split_whitespace();
        if it.next() != Some("cones") {
            return Err(bad("expected `cones` line"));
        }
        let cones = it
            .map(|tok| {
                let (kind, d) = tok.split_once(':').ok_or_else(|| bad("bad cone token"))?;
                let d = num(d)?;
                match kind {
                    "zero" => Ok(Cone::Zero(d)),
                    "nonneg" => Ok(Cone::Nonnegative(d)),
                    "soc" => Ok(Cone::SecondOrder(d)),
                    _ => Err(bad("unknown cone kind")),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut trip = Vec::with_capacity(nnz);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("bad matrix entry"));
            }
            trip.push((num(f[0])?, num(f[1])?, f[2].parse::<f64>().map_err(|_| bad("bad float"))?));
        }
        if trip.len() != nnz || c.len() != n || h.len() != m {
            return Err(bad("declared sizes do not match contents"));
        }
        ConicProgram::new(c, SparseMatrix::from_triplets(m, n, trip)?, h, cones)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    /// The solver stopped without a certifiable answer.
    NumericalFailure,
}

impl SolveStatus {
    pub fn label(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::PrimalInfeasible => "primal-infeasible",
            SolveStatus::DualInfeasible => "dual-infeasible",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// |sᵀy| / (1 + ‖s‖‖y‖), a cosine-like measure that stays meaningful
    /// when inactive slacks are large.
    pub complementarity: f64,
    /// Largest cone-membership violation of s and y.
    pub cone: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap).max(self.complementarity).max(self.cone)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
    pub residuals: Residuals,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Bound on every certified KKT residual.
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// KKT residuals of a candidate primal-dual triple, computed from the raw
/// program data.
pub fn kkt_residuals(p: &ConicProgram, z: &[f64], s: &[f64], y: &[f64]) -> Residuals {
    let gz = p.g.mul_vec(z);
    let r_prim: Vec<f64> = gz.iter().zip(s).zip(&p.h).map(|((a, b), c)| a + b - c).collect();
    let gty = p.g.tr_mul_vec(y);
    let r_dual: Vec<f64> = gty.iter().zip(&p.c).map(|(a, b)| a + b).collect();
    let pobj = dot(&p.c, z);
    let dobj = -dot(&p.h, y);
    let scale = 1.0 + pobj.abs().max(dobj.abs());
    let mut cone = 0.0_f64;
    let mut offset = 0;
    for k in &p.cones {
        let d = k.dim();
        cone = cone.max(k.violation(&s[offset..offset + d]));
        cone = cone.max(k.dual_violation(&y[offset..offset + d]));
        offset += d;
    }
    Residuals {
        primal: inf_norm(&r_prim) / (1.0 + inf_norm(&p.h)),
        dual: inf_norm(&r_dual) / (1.0 + inf_norm(&p.c)),
        gap: (pobj - dobj).abs() / scale,
        complementarity: dot(s, y).abs() / (1.0 + norm(s) * norm(y)),
        cone,
    }
}

/// Solves the program. Infeasible or unbounded instances are reported
/// through the status, never as an error; `Err` is reserved for malformed
/// input.
pub fn solve(p: &ConicProgram, settings: SolverSettings) -> Result<ConicSolution> {
    p.validate()?;
    let n = p.num_vars();
    let m = p.num_rows();
    let quad = CscMatrix::<f64>::zeros((n, n));
    let a = CscMatrix::new(m, n, p.g.col_ptr.clone(), p.g.row_idx.clone(), p.g.values.clone());
    let cones: Vec<SupportedConeT<f64>> = p
        .cones
        .iter()
        .map(|k| match *k {
            Cone::Zero(d) => SupportedConeT::ZeroConeT(d),
            Cone::Nonnegative(d) => SupportedConeT::NonnegativeConeT(d),
            Cone::SecondOrder(d) => SupportedConeT::SecondOrderConeT(d),
        })
        .collect();
    let mut best: Option<ConicSolution> = None;
    // The internal stopping rule normalises differently from ours, and long
    // horizons are poorly conditioned; retry with tighter tolerances and
    // more refinement before declaring a numerical failure.
    for attempt in 0..3 {
        let inner = 0.1 * settings.tol * 1e-2f64.powi(attempt);
        let refine = if attempt == 0 { 1e-13 } else { 1e-15 };
        let cfg = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(settings.max_iter)
            .tol_feas(inner)
            .tol_gap_abs(inner)
            .tol_gap_rel(inner)
            .presolve_enable(false)
            .max_threads(1)
            .iterative_refinement_reltol(refine)
            .iterative_refinement_abstol(refine)
            .iterative_refinement_max_iter(if attempt == 0 { 10 } else { 50 })
            .static_regularization_constant(if attempt == 0 { 1e-8 } else { 1e-10 })
            .build()
            .map_err(|e| Error::Solver(e.to_string()))?;
        let mut solver =
            DefaultSolver::new(&quad, &p.c, &a, &p.h, &cones, cfg).map_err(|e| Error::Solver(e.to_string()))?;
        solver.solve();
        let sol = solver.solution;
        let residuals = kkt_residuals(p, &sol.x, &sol.s, &sol.z);
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                if residuals.max() < settings.tol {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::NumericalFailure
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::PrimalInfeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::DualInfeasible,
            SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIterations,
            _ => SolveStatus::NumericalFailure,
        };
        let candidate = ConicSolution {
            status,
            objective: dot(&p.c, &sol.x),
            z: sol.x,
            s: sol.s,
            y: sol.z,
            iterations: sol.iterations,
            residuals,
        };
        let retry = matches!(status, SolveStatus::NumericalFailure | SolveStatus::MaxIterations);
        if !retry {
            return Ok(candidate);
        }
        if best.as_ref().is_none_or(|b| candidate.residuals.max() < b.residuals.max()) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one attempt"))
}
