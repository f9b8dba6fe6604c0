//! Backend-neutral conic programs.
//!
//! Programs are affine expressions over scalar variables constrained to a
//! fixed cone menu: affine equality/inequality, second-order and rotated
//! second-order cones, the three-dimensional power cone, the exponential
//! cone, and PSD blocks (real symmetric, or Hermitian through the standard
//! `[Re, -Im; Im, Re]` embedding). Anything speaking this menu can back the
//! layer; the current backend is Clarabel's interior-point solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, ExponentialConeT, IPSolver, NonnegativeConeT, PSDTriangleConeT,
    PowerConeT, SecondOrderConeT, SolverStatus, SupportedConeT, ZeroConeT,
};
use serde::Serialize;
use thiserror::Error;

/// Handle to one scalar variable of a [`ConicProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VarId(usize);

/// Affine expression `constant + sum coeff_i * x_i`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LinExpr {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn term(v: VarId, c: f64) -> Self {
        Self { terms: vec![(v.0, c)], constant: 0.0 }
    }

    pub fn add_term(&mut self, v: VarId, c: f64) {
        self.terms.push((v.0, c));
    }

    pub fn add_const(&mut self, c: f64) {
        self.constant += c;
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl std::ops::Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl std::ops::Sub for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: LinExpr) -> LinExpr {
        self.terms.extend(rhs.terms.into_iter().map(|(i, c)| (i, -c)));
        self.constant -= rhs.constant;
        self
    }
}

impl std::ops::Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, s: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }
}

impl std::ops::Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
enum ConeKind {
    Soc,
    Exp,
    Pow(f64),
    PsdTriangle(usize),
}

#[derive(Serialize)]
struct Block {
    cone: ConeKind,
    rows: Vec<LinExpr>,
}

/// Terminal state of a solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Status {
    Optimal,
    NearOptimal,
    Infeasible,
    NumericalFailure(String),
}

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("conic solve did not reach optimality: {status:?}")]
    NotOptimal { status: Status },
    #[error("malformed program: {0}")]
    Malformed(String),
}

/// Solver tolerances and iteration budget.
#[derive(Debug, Clone, Copy)]
pub struct SolveSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: u32,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self { abs_tol: 1e-9, rel_tol: 1e-9, max_iter: 200 }
    }
}

/// Primal solution report.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
}

impl ConicSolution {
    pub fn value(&self, v: VarId) -> f64 {
        self.x[v.0]
    }

    pub fn eval(&self, e: &LinExpr) -> f64 {
        e.constant + e.terms.iter().map(|&(i, c)| c * self.x[i]).sum::<f64>()
    }

    pub fn usable(&self) -> bool {
        matches!(self.status, Status::Optimal | Status::NearOptimal)
    }

    pub fn require_usable(&self) -> Result<&Self, ConicError> {
        if self.usable() {
            Ok(self)
        } else {
            Err(ConicError::NotOptimal { status: self.status.clone() })
        }
    }
}

/// A conic program under construction. Constraints hold affine expressions;
/// `solve` assembles the Clarabel data and runs the interior-point method.
#[derive(Default, Serialize)]
pub struct ConicProgram {
    n_vars: usize,
    objective: LinExpr,
    eq_rows: Vec<LinExpr>,
    ineq_rows: Vec<LinExpr>,
    blocks: Vec<Block>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.n_vars
    }

    pub fn add_var(&mut self) -> VarId {
        let id = VarId(self.n_vars);
        self.n_vars += 1;
        id
    }

    pub fn add_vars(&mut self, n: usize) -> Vec<VarId> {
        (0..n).map(|_| self.add_var()).collect()
    }

    pub fn add_bounded_var(&mut self, lo: Option<f64>, hi: Option<f64>) -> VarId {
        let v = self.add_var();
        if let Some(l) = lo {
            self.add_ge(v.into(), LinExpr::constant(l));
        }
        if let Some(h) = hi {
            self.add_le(v.into(), LinExpr::constant(h));
        }
        v
    }

    /// Minimize `expr` (its constant is carried into the reported objective).
    pub fn set_objective(&mut self, expr: LinExpr) {
        self.objective = expr;
    }

    pub fn add_eq(&mut self, lhs: LinExpr, rhs: LinExpr) {
        self.eq_rows.push(lhs - rhs);
    }

    pub fn add_le(&mut self, lhs: LinExpr, rhs: LinExpr) {
        self.ineq_rows.push(rhs - lhs);
    }

    pub fn add_ge(&mut self, lhs: LinExpr, rhs: LinExpr) {
        self.ineq_rows.push(lhs - rhs);
    }

    /// `|| xs ||_2 <= t`.
    pub fn add_soc(&mut self, t: LinExpr, xs: Vec<LinExpr>) {
        let mut rows = vec![t];
        rows.extend(xs);
        self.blocks.push(Block { cone: ConeKind::Soc, rows });
    }

    /// Rotated cone `a * b >= ||xs||^2` with `a, b >= 0`.
    pub fn add_rsoc(&mut self, a: LinExpr, b: LinExpr, xs: Vec<LinExpr>) {
        let mut rows = vec![a.clone() + b.clone(), a - b];
        rows.extend(xs.into_iter().map(|x| x * 2.0));
        self.blocks.push(Block { cone: ConeKind::Soc, rows });
    }

    /// Exponential cone `y * exp(x / y) <= z`, `y > 0`.
    pub fn add_exp(&mut self, x: LinExpr, y: LinExpr, z: LinExpr) {
        self.blocks.push(Block { cone: ConeKind::Exp, rows: vec![x, y, z] });
    }

    /// Power cone `x1^alpha * x2^(1-alpha) >= |x3|`, `x1, x2 >= 0`.
    pub fn add_pow(&mut self, x1: LinExpr, x2: LinExpr, x3: LinExpr, alpha: f64) {
        self.blocks.push(Block { cone: ConeKind::Pow(alpha), rows: vec![x1, x2, x3] });
    }

    /// PSD constraint on a symmetric matrix given by its upper triangle in
    /// column-major order (`n*(n+1)/2` expressions).
    pub fn add_psd_upper(&mut self, n: usize, upper_colmajor: Vec<LinExpr>) {
        assert_eq!(upper_colmajor.len(), n * (n + 1) / 2);
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut rows = Vec::with_capacity(upper_colmajor.len());
        let mut it = upper_colmajor.into_iter();
        for j in 0..n {
            for i in 0..=j {
                let e = it.next().unwrap();
                rows.push(if i == j { e } else { e * sqrt2 });
            }
        }
        self.blocks.push(Block { cone: ConeKind::PsdTriangle(n), rows });
    }

    /// PSD constraint on a real symmetric matrix described entrywise.
    pub fn add_sym_psd(&mut self, n: usize, entry: impl Fn(usize, usize) -> LinExpr) {
        let mut tri = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in 0..=j {
                tri.push(entry(i, j));
            }
        }
        self.add_psd_upper(n, tri);
    }

    /// PSD constraint on a Hermitian matrix `P + iQ` (`entry(i, j)` returns
    /// the real and imaginary parts for `i <= j`; the imaginary part of a
    /// diagonal entry is ignored) via the symmetric embedding
    /// `[[P, -Q], [Q, P]]`.
    pub fn add_hermitian_psd(&mut self, n: usize, entry: impl Fn(usize, usize) -> (LinExpr, LinExpr)) {
        let re = |i: usize, j: usize| if i <= j { entry(i, j).0 } else { entry(j, i).0 };
        // Q is antisymmetric: Q_ij = Im(i, j) for i < j, Q_ji = -Q_ij
        let im = |i: usize, j: usize| -> LinExpr {
            use std::cmp::Ordering::*;
            match i.cmp(&j) {
                Less => entry(i, j).1,
                Equal => LinExpr::zero(),
                Greater => -entry(j, i).1,
            }
        };
        self.add_sym_psd(2 * n, move |a, b| {
            let (i, j) = (a % n, b % n);
            match (a < n, b < n) {
                (true, true) | (false, false) => re(i, j),
                (true, false) => -im(i, j), // upper-right block -Q
                (false, true) => im(i, j),
            }
        });
    }

    // ── convex atoms ────────────────────────────────────────────────────

    /// `1 / z <= w` for `z > 0` (as `z * w >= 1`).
    pub fn add_recip_le(&mut self, z: LinExpr, w: LinExpr) {
        self.add_rsoc(z, w, vec![LinExpr::constant(1.0)]);
    }

    /// `z^(-1/2) <= w` for `z > 0` (as `w^(2/3) z^(1/3) >= 1`).
    pub fn add_rsqrt_le(&mut self, z: LinExpr, w: LinExpr) {
        self.add_pow(w, z, LinExpr::constant(1.0), 2.0 / 3.0);
    }

    /// Weighted square norm `sum_i weight_i * xs_i^2 <= t`.
    pub fn add_sq_le(&mut self, xs: Vec<(LinExpr, f64)>, t: LinExpr) {
        let scaled = xs
            .into_iter()
            .map(|(e, w)| {
                assert!(w >= 0.0);
                e * w.sqrt()
            })
            .collect();
        self.add_rsoc(t, LinExpr::constant(1.0), scaled);
    }

    /// `v <= ln(z)`.
    pub fn add_log_ge(&mut self, v: LinExpr, z: LinExpr) {
        self.add_exp(v, LinExpr::constant(1.0), z);
    }

    /// Self-describing JSON dump for cross-checking against external tools.
    pub fn dump_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn solve(&self, settings: &SolveSettings) -> Result<ConicSolution, ConicError> {
        let mut rows: Vec<&LinExpr> = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        if !self.eq_rows.is_empty() {
            cones.push(ZeroConeT(self.eq_rows.len()));
            rows.extend(self.eq_rows.iter());
        }
        if !self.ineq_rows.is_empty() {
            cones.push(NonnegativeConeT(self.ineq_rows.len()));
            rows.extend(self.ineq_rows.iter());
        }
        for block in &self.blocks {
            cones.push(match block.cone {
                ConeKind::Soc => SecondOrderConeT(block.rows.len()),
                ConeKind::Exp => ExponentialConeT(),
                ConeKind::Pow(a) => PowerConeT(a),
                ConeKind::PsdTriangle(n) => PSDTriangleConeT(n),
            });
            rows.extend(block.rows.iter());
        }

        // s = b - Ax must equal each row expression c + a^T x.
        let m = rows.len();
        let mut b = Vec::with_capacity(m);
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for (r, e) in rows.iter().enumerate() {
            b.push(e.constant);
            for &(col, c) in &e.terms {
                if col >= self.n_vars {
                    return Err(ConicError::Malformed(format!("variable {col} out of range")));
                }
                triplets.push((r, col, -c));
            }
        }
        let a = csc_from_triplets(m, self.n_vars, &mut triplets);
        let mut q = vec![0.0; self.n_vars];
        for &(col, c) in &self.objective.terms {
            if col >= self.n_vars {
                return Err(ConicError::Malformed(format!("objective variable {col} out of range")));
            }
            q[col] += c;
        }
        let p = CscMatrix::zeros((self.n_vars, self.n_vars));

        let cl_settings = DefaultSettings {
            verbose: std::env::var("PINCH_CONIC_VERBOSE").is_ok(),
            max_iter: settings.max_iter,
            tol_gap_abs: settings.abs_tol,
            tol_gap_rel: settings.rel_tol,
            tol_feas: settings.abs_tol.max(1e-9),
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, cl_settings)
            .map_err(|e| ConicError::Malformed(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => Status::Optimal,
            SolverStatus::AlmostSolved => Status::NearOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Status::Infeasible,
            other => Status::NumericalFailure(format!("{other:?}")),
        };
        Ok(ConicSolution {
            status,
            x: sol.x.clone(),
            objective: sol.obj_val + self.objective.constant,
            iterations: sol.iterations,
        })
    }
}

fn csc_from_triplets(m: usize, n: usize, triplets: &mut Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    triplets.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = Vec::with_capacity(n + 1);
    colptr.push(0usize);
    let mut rowval: Vec<usize> = Vec::with_capacity(triplets.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(triplets.len());
    let mut idx = 0;
    for c in 0..n {
        let col_start = rowval.len();
        while idx < triplets.len() && triplets[idx].1 == c {
            let (r, _, v) = triplets[idx];
            idx += 1;
            if rowval.len() > col_start && *rowval.last().unwrap() == r {
                *nzval.last_mut().unwrap() += v; // merge duplicates
            } else {
                rowval.push(r);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}
