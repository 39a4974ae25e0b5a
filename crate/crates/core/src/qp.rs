//! Dense convex QP solver: ADMM over the box-constrained form
//!
//! ```text
//! minimize   1/2 x'Px + q'x
//! subject to l <= Ax <= u
//! ```
//!
//! with Ruiz equilibration, over-relaxation, infeasibility certificates
//! and an active-set polishing pass.

use std::io::{BufRead, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QuadraticProgram {
    /// Checks shapes, symmetry, positive semidefiniteness and bound order.
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self> {
        let qp = Self { p, q, a, l, u };
        qp.validate()?;
        Ok(qp)
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        let m = self.l.len();
        if self.p.shape() != (n, n) {
            return Err(Error::Dimension(format!("P is {:?}, expected {n}x{n}", self.p.shape())));
        }
        if self.a.shape() != (m, n) {
            return Err(Error::Dimension(format!("A is {:?}, expected {m}x{n}", self.a.shape())));
        }
        if self.u.len() != m {
            return Err(Error::Dimension(format!("u has {} rows, l has {m}", self.u.len())));
        }
        let scale = self.p.amax().max(1.0);
        if (&self.p - self.p.transpose()).amax() > 1e-9 * scale {
            return Err(Error::InvalidArgument("P is not symmetric".into()));
        }
        if n > 0 {
            let shifted = &self.p + DMatrix::identity(n, n) * (1e-8 * scale);
            if Cholesky::new(shifted).is_none() {
                return Err(Error::InvalidArgument("P is not positive semidefinite".into()));
            }
        }
        for i in 0..m {
            if self.l[i].is_nan() || self.u[i].is_nan() || self.l[i] > self.u[i] {
                return Err(Error::InvalidArgument(format!(
                    "bounds of row {i} are inconsistent: [{}, {}]",
                    self.l[i], self.u[i]
                )));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Largest bound violation of `x`.
    pub fn infeasibility(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        (0..self.m())
            .map(|i| (self.l[i] - ax[i]).max(ax[i] - self.u[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    fn is_equality(&self, i: usize) -> bool {
        self.l[i].is_finite() && (self.u[i] - self.l[i]).abs() <= 1e-12 * self.l[i].abs().max(1.0)
    }

    /// Writes the problem in a plain-text block format.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "qp {} {}", self.n(), self.m())?;
        let row = |w: &mut W, v: &mut dyn Iterator<Item = f64>| -> std::io::Result<()> {
            let s: Vec<String> = v.map(|x| format!("{x:e}")).collect();
            writeln!(w, "{}", s.join(" "))
        };
        writeln!(w, "P")?;
        for i in 0..self.n() {
            row(&mut w, &mut self.p.row(i).iter().copied())?;
        }
        writeln!(w, "q")?;
        row(&mut w, &mut self.q.iter().copied())?;
        writeln!(w, "A")?;
        for i in 0..self.m() {
            row(&mut w, &mut self.a.row(i).iter().copied())?;
        }
        writeln!(w, "l")?;
        row(&mut w, &mut self.l.iter().copied())?;
        writeln!(w, "u")?;
        row(&mut w, &mut self.u.iter().copied())?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of QP dump".into()))?
                .map_err(Error::from)
        };
        let head = next()?;
        let dims: Vec<usize> = head
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header '{head}'"))))
            .collect::<Result<_>>()?;
        let [n, m] = dims[..] else {
            return Err(Error::Parse(format!("bad header '{head}'")));
        };
        let nums = |s: String, len: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = s
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{t}'"))))
                .collect::<Result<_>>()?;
            if v.len() != len {
                return Err(Error::Parse(format!("expected {len} numbers, got {}", v.len())));
            }
            Ok(v)
        };
        next()?;
        let mut p = DMatrix::zeros(n, n);
        for i in 0..n {
            let v = nums(next()?, n)?;
            p.row_mut(i).copy_from_slice(&v);
        }
        next()?;
        let q = DVector::from_vec(nums(next()?, n)?);
        next()?;
        let mut a = DMatrix::zeros(m, n);
        for i in 0..m {
            let v = nums(next()?, n)?;
            a.row_mut(i).copy_from_slice(&v);
        }
        next()?;
        let l = DVector::from_vec(nums(next()?, m)?);
        next()?;
        let u = DVector::from_vec(nums(next()?, m)?);
        Self::new(p, q, a, l, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Constraint multipliers; positive on active upper bounds.
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    /// Whether the active-set refinement replaced the ADMM iterate.
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub scaling_iters: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub max_iter: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            eps_prim_inf: 1e-4,
            eps_dual_inf: 1e-4,
            max_iter: 4000,
            polish: true,
        }
    }
}

/// Penalty multiplier on equality rows.
const EQUALITY_RHO_SCALE: f64 = 1e3;
/// Bounds on the adapted base penalty.
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
/// Iterations between penalty updates (a multiple of `CHECK_EVERY`).
const ADAPT_EVERY: usize = 50;
/// Iterations between termination checks.
const CHECK_EVERY: usize = 5;
/// Penalty on rows with both bounds infinite.
const FREE_ROW_RHO: f64 = 1e-6;

/// Equilibrated problem data and the cached factorisation.
#[derive(Debug, Clone)]
struct Workspace {
    source: QuadraticProgram,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: CsrMatrix<f64>,
    at: CsrMatrix<f64>,
    /// Largest magnitude in each row of the unscaled A.
    row_norm: DVector<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    rho: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    settings: QpSettings,
}

/// Cholesky factor of `P + sigma I + A' diag(rho) A`.
fn factorize(p: &DMatrix<f64>, a: &CsrMatrix<f64>, rho: &DVector<f64>, sigma: f64) -> Option<Cholesky<f64, Dyn>> {
    let n = p.nrows();
    let mut k = p + DMatrix::identity(n, n) * sigma;
    for (i, row) in a.row_iter().enumerate() {
        for (&j1, &v1) in row.col_indices().iter().zip(row.values()) {
            for (&j2, &v2) in row.col_indices().iter().zip(row.values()) {
                k[(j1, j2)] += rho[i] * v1 * v2;
            }
        }
    }
    Cholesky::new(k)
}

fn clamp_norm(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.min(1e4)
    }
}

impl Workspace {
    fn build(qp: &QuadraticProgram, settings: &QpSettings) -> Result<Self> {
        let (n, m) = (qp.n(), qp.m());
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);
        let mut p = qp.p.clone();
        let mut a = CsrMatrix::from(&qp.a);
        let mut q = qp.q.clone();
        let mut c = 1.0;
        let col_max = |p: &DMatrix<f64>| -> Vec<f64> {
            p.as_slice()
                .chunks_exact(n.max(1))
                .map(|col| col.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())))
                .collect()
        };
        for _ in 0..settings.scaling_iters {
            let mut cmax = col_max(&p);
            cmax.resize(n, 0.0);
            let mut rmax = vec![0.0f64; m];
            for (i, j, v) in a.triplet_iter() {
                cmax[j] = cmax[j].max(v.abs());
                rmax[i] = rmax[i].max(v.abs());
            }
            let dd = DVector::from_fn(n, |j, _| 1.0 / clamp_norm(cmax[j]).sqrt());
            let de = DVector::from_fn(m, |i, _| 1.0 / clamp_norm(rmax[i]).sqrt());
            for (j, col) in p.as_mut_slice().chunks_exact_mut(n.max(1)).enumerate() {
                for (i, v) in col.iter_mut().enumerate() {
                    *v *= dd[i] * dd[j];
                }
            }
            for (i, j, v) in a.triplet_iter_mut() {
                *v *= de[i] * dd[j];
            }
            q.component_mul_assign(&dd);
            d.component_mul_assign(&dd);
            e.component_mul_assign(&de);
            // cost scaling
            let mean_col = if n > 0 {
                col_max(&p).iter().sum::<f64>() / n as f64
            } else {
                1.0
            };
            let gamma = 1.0 / clamp_norm(mean_col.max(q.amax()));
            p *= gamma;
            q *= gamma;
            c *= gamma;
        }
        let l = qp.l.component_mul(&e);
        let u = qp.u.component_mul(&e);
        let rho = DVector::from_fn(m, |i, _| {
            if qp.is_equality(i) {
                settings.rho * EQUALITY_RHO_SCALE
            } else if qp.l[i].is_infinite() && qp.u[i].is_infinite() {
                FREE_ROW_RHO
            } else {
                settings.rho
            }
        });
        let at = a.transpose();
        let mut row_norm = DVector::zeros(m);
        for (i, _, v) in CsrMatrix::from(&qp.a).triplet_iter() {
            row_norm[i] = f64::max(row_norm[i], v.abs());
        }
        let factor = factorize(&p, &a, &rho, settings.sigma)
            .ok_or_else(|| Error::InvalidArgument("KKT matrix is not positive definite".into()))?;
        Ok(Self {
            source: qp.clone(),
            d,
            e,
            c,
            p,
            q,
            a,
            at,
            row_norm,
            l,
            u,
            rho,
            factor,
            settings: *settings,
        })
    }

    fn matches(&self, qp: &QuadraticProgram, settings: &QpSettings) -> bool {
        self.settings == *settings
            && self.source.p == qp.p
            && self.source.a == qp.a
            && self.source.q == qp.q
            && self.source.l == qp.l
            && self.source.u == qp.u
    }
}

/// Reusable solver that keeps the last factorisation and iterate.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
    workspace: Option<Workspace>,
    /// Number of factorisations performed.
    pub factorizations: usize,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self {
            settings,
            workspace: None,
            factorizations: 0,
        }
    }

    pub fn solve(&mut self, qp: &QuadraticProgram) -> Result<QpSolution> {
        self.solve_warm(qp, None, None)
    }

    /// Solves starting from `(x0, y0)` in unscaled coordinates when given.
    pub fn solve_warm(
        &mut self,
        qp: &QuadraticProgram,
        x0: Option<&DVector<f64>>,
        y0: Option<&DVector<f64>>,
    ) -> Result<QpSolution> {
        qp.validate()?;
        let reuse = self
            .workspace
            .as_ref()
            .is_some_and(|w| w.matches(qp, &self.settings));
        if !reuse {
            self.workspace = Some(Workspace::build(qp, &self.settings)?);
            self.factorizations += 1;
        }
        let ws = self.workspace.as_ref().expect("workspace built");
        Ok(admm(ws, qp, x0, y0))
    }
}

/// One-shot solve with the given tolerances.
pub fn solve(qp: &QuadraticProgram, eps_abs: f64, eps_rel: f64, max_iter: usize) -> Result<QpSolution> {
    let settings = QpSettings {
        eps_abs,
        eps_rel,
        max_iter,
        ..QpSettings::default()
    };
    QpSolver::new(settings).solve(qp)
}

fn admm(
    ws: &Workspace,
    qp: &QuadraticProgram,
    x0: Option<&DVector<f64>>,
    y0: Option<&DVector<f64>>,
) -> QpSolution {
    let s = &ws.settings;
    let (n, m) = (qp.n(), qp.m());
    let mut x = match x0 {
        Some(v) if v.len() == n => v.component_div(&ws.d),
        _ => DVector::zeros(n),
    };
    let mut y = match y0 {
        Some(v) if v.len() == m => v.component_div(&ws.e) * ws.c,
        _ => DVector::zeros(m),
    };
    let mut z = (&ws.a * &x).zip_zip_map(&ws.l, &ws.u, |v, lo, hi| v.clamp(lo, hi));

    let d_inv = ws.d.map(|v| 1.0 / v);
    let e_inv = ws.e.map(|v| 1.0 / v);
    let mut status = QpStatus::MaxIter;
    let mut iterations = s.max_iter;
    let (mut r_prim, mut r_dual) = (f64::INFINITY, f64::INFINITY);
    let mut rho = ws.rho.clone();
    let mut adapted: Option<Cholesky<f64, Dyn>> = None;

    for k in 1..=s.max_iter {
        let rhs = &x * s.sigma - &ws.q + &ws.at * (rho.component_mul(&z) - &y);
        let xt = match &adapted {
            Some(f) => f.solve(&rhs),
            None => ws.factor.solve(&rhs),
        };
        let zt = &ws.a * &xt;
        let x_new = &xt * s.alpha + &x * (1.0 - s.alpha);
        let zr = &zt * s.alpha + &z * (1.0 - s.alpha);
        let z_new = (&zr + y.component_div(&rho)).zip_zip_map(&ws.l, &ws.u, |v, lo, hi| v.clamp(lo, hi));
        let y_new = &y + rho.component_mul(&(&zr - &z_new));

        let dx = &x_new - &x;
        let dy = &y_new - &y;
        x = x_new;
        z = z_new;
        y = y_new;
        if k % CHECK_EVERY != 0 && k != s.max_iter {
            continue;
        }

        // residuals in the original scaling
        let ax = (&ws.a * &x).component_mul(&e_inv);
        let zu = z.component_mul(&e_inv);
        r_prim = (&ax - &zu).amax();
        let px = (&ws.p * &x).component_mul(&d_inv) / ws.c;
        let aty = (&ws.at * &y).component_mul(&d_inv) / ws.c;
        let qu = ws.q.component_mul(&d_inv) / ws.c;
        r_dual = (&px + &qu + &aty).amax();
        let eps_prim = s.eps_abs + s.eps_rel * ax.amax().max(zu.amax());
        let eps_dual = s.eps_abs + s.eps_rel * px.amax().max(aty.amax()).max(qu.amax());
        if r_prim <= eps_prim && r_dual <= eps_dual {
            status = QpStatus::Solved;
            iterations = k;
            break;
        }
        if primal_infeasible(ws, &dy, s.eps_prim_inf, &d_inv) {
            status = QpStatus::PrimalInfeasible;
            iterations = k;
            break;
        }
        if dual_infeasible(ws, &dx, s.eps_dual_inf, &e_inv) {
            status = QpStatus::DualInfeasible;
            iterations = k;
            break;
        }
        if k % ADAPT_EVERY == 0 {
            // balance the normalised residuals by rescaling rho
            let prim = r_prim / ax.amax().max(zu.amax()).max(1e-12);
            let dual = r_dual / px.amax().max(aty.amax()).max(qu.amax()).max(1e-12);
            let base = rho.iter().copied().fold(0.0, f64::max) / ws.rho.amax() * s.rho;
            let ratio = (prim / dual.max(1e-30))
                .sqrt()
                .clamp(0.1, 10.0)
                .clamp(RHO_MIN / base, RHO_MAX / base);
            if !(0.2..=5.0).contains(&ratio) {
                let scaled = &rho * ratio;
                if let Some(f) = factorize(&ws.p, &ws.a, &scaled, s.sigma) {
                    rho = scaled;
                    adapted = Some(f);
                }
            }
        }
    }

    let xu = x.component_mul(&ws.d);
    let yu = y.component_mul(&ws.e) / ws.c;
    let mut sol = QpSolution {
        objective: qp.objective(&xu),
        x: xu,
        y: yu,
        status,
        iterations,
        primal_residual: r_prim,
        dual_residual: r_dual,
        polished: false,
    };
    if s.polish && matches!(status, QpStatus::Solved | QpStatus::MaxIter) {
        polish(qp, &mut sol, s);
    }
    sol
}

fn primal_infeasible(ws: &Workspace, dy: &DVector<f64>, eps: f64, d_inv: &DVector<f64>) -> bool {
    // certificate in the original scaling: dy_u = E dy / c
    let dyu = dy.component_mul(&ws.e);
    let norm = dyu.amax();
    if norm < 1e-30 {
        return false;
    }
    let atdy = (&ws.at * dy).component_mul(d_inv);
    if atdy.amax() > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let (lo, hi) = (ws.source.l[i], ws.source.u[i]);
        if dyu[i] > 0.0 {
            if hi.is_infinite() {
                return false;
            }
            support += hi * dyu[i];
        } else if dyu[i] < 0.0 {
            if lo.is_infinite() {
                return false;
            }
            support += lo * dyu[i];
        }
    }
    support < -eps * norm
}

fn dual_infeasible(ws: &Workspace, dx: &DVector<f64>, eps: f64, e_inv: &DVector<f64>) -> bool {
    let dxu = dx.component_mul(&ws.d);
    let norm = dxu.amax();
    if norm < 1e-30 {
        return false;
    }
    let src = &ws.source;
    if (&src.p * &dxu).amax() > eps * norm {
        return false;
    }
    if src.q.dot(&dxu) > -eps * norm {
        return false;
    }
    let adx = (&ws.a * dx).component_mul(e_inv);
    for i in 0..adx.len() {
        let tol = eps * norm * ws.row_norm[i].max(1e-12);
        let ok_hi = src.u[i].is_infinite() || adx[i] <= tol;
        let ok_lo = src.l[i].is_infinite() || adx[i] >= -tol;
        if !(ok_hi && ok_lo) {
            return false;
        }
    }
    true
}

/// Guesses the active set from the ADMM iterate and solves the equality-
/// constrained KKT system on it; keeps the result if it is a verified
/// optimum.
fn polish(qp: &QuadraticProgram, sol: &mut QpSolution, s: &QpSettings) {
    let (n, m) = (qp.n(), qp.m());
    let ax = &qp.a * &sol.x;
    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        let at_lower = qp.l[i].is_finite() && ax[i] - qp.l[i] < -sol.y[i];
        if qp.is_equality(i) || at_lower {
            active.push((i, qp.l[i]));
        } else if qp.u[i].is_finite() && qp.u[i] - ax[i] < sol.y[i] {
            active.push((i, qp.u[i]));
        }
    }
    let k = active.len();
    let Some((x, y_act)) = solve_kkt(qp, &active) else {
        return;
    };
    if x.len() != n || k != y_act.len() {
        return;
    }
    let mut y = DVector::zeros(m);
    for (j, (i, bound)) in active.iter().enumerate() {
        y[*i] = y_act[j];
        let eq = qp.is_equality(*i);
        // multiplier sign must match the bound that is active
        let tol = 1e-9 * (1.0 + y_act[j].abs());
        if !eq && *bound == qp.l[*i] && y_act[j] > tol {
            return;
        }
        if !eq && *bound == qp.u[*i] && *bound != qp.l[*i] && y_act[j] < -tol {
            return;
        }
    }
    let ax = &qp.a * &x;
    let scale = 1.0 + ax.amax();
    if qp.infeasibility(&x) > 1e-9 * scale {
        return;
    }
    let r_dual = (&qp.p * &x + &qp.q + qp.a.transpose() * &y).amax();
    if r_dual > s.eps_abs.max(1e-9) {
        return;
    }
    sol.primal_residual = qp.infeasibility(&x);
    sol.dual_residual = r_dual;
    sol.objective = qp.objective(&x);
    sol.x = x;
    sol.y = y;
    sol.polished = true;
    sol.status = QpStatus::Solved;
}

/// Solves the KKT system with the given rows held at the given values.
fn solve_kkt(qp: &QuadraticProgram, active: &[(usize, f64)]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.n();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&qp.q));
    for (j, (i, b)) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + j, c)] = qp.a[(*i, c)];
            kkt[(c, n + j)] = qp.a[(*i, c)];
        }
        rhs[n + j] = *b;
    }
    // regularised factorisation plus iterative refinement
    let delta = 1e-9 * (1.0 + qp.p.amax());
    let mut reg = kkt.clone();
    for i in 0..n {
        reg[(i, i)] += delta;
    }
    for j in 0..k {
        reg[(n + j, n + j)] -= delta;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let r = &rhs - &kkt * &sol;
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) || (&rhs - &kkt * &sol).amax() > 1e-8 * (1.0 + rhs.amax()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub passed: bool,
}

/// Checks optimality of `x` with multipliers estimated on the constraints
/// that are active to within `tol`.
pub fn kkt_check(qp: &QuadraticProgram, x: &DVector<f64>, tol: f64) -> Result<KktReport> {
    if x.len() != qp.n() {
        return Err(Error::Dimension(format!("x has {} entries, expected {}", x.len(), qp.n())));
    }
    let ax = &qp.a * x;
    let grad = &qp.p * x + &qp.q;
    let near: Vec<usize> = (0..qp.m())
        .filter(|&i| (ax[i] - qp.l[i]).abs() <= tol.max(1e-12) || (qp.u[i] - ax[i]).abs() <= tol.max(1e-12))
        .collect();
    let mut y = DVector::zeros(qp.m());
    if !near.is_empty() {
        // least-squares multipliers: A_act' y = -grad
        let at = DMatrix::from_fn(qp.n(), near.len(), |r, c| qp.a[(near[c], r)]);
        let svd = at.svd(true, true);
        if let Ok(ya) = svd.solve(&(-&grad), 1e-12) {
            for (c, &i) in near.iter().enumerate() {
                let at_lower = (ax[i] - qp.l[i]).abs() <= tol.max(1e-12);
                let at_upper = (qp.u[i] - ax[i]).abs() <= tol.max(1e-12);
                y[i] = match (at_lower, at_upper) {
                    (true, true) => ya[c],
                    (true, false) => ya[c].min(0.0),
                    _ => ya[c].max(0.0),
                };
            }
        }
    }
    kkt_check_with_duals(qp, x, &y, tol)
}

/// Checks optimality of a primal-dual pair.
pub fn kkt_check_with_duals(
    qp: &QuadraticProgram,
    x: &DVector<f64>,
    y: &DVector<f64>,
    tol: f64,
) -> Result<KktReport> {
    if x.len() != qp.n() || y.len() != qp.m() {
        return Err(Error::Dimension("x or y has the wrong length".into()));
    }
    let ax = &qp.a * x;
    let stationarity = (&qp.p * x + &qp.q + qp.a.transpose() * y).amax();
    let feasibility = qp.infeasibility(x);
    let mut complementarity: f64 = 0.0;
    for i in 0..qp.m() {
        let slack = if y[i] > 0.0 { qp.u[i] - ax[i] } else { ax[i] - qp.l[i] };
        if y[i] != 0.0 {
            complementarity = complementarity.max((y[i] * slack).abs());
        }
    }
    Ok(KktReport {
        stationarity,
        feasibility,
        complementarity,
        passed: stationarity <= tol && feasibility <= tol && complementarity <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn qp1(p: &[f64], q: &[f64], a: &[f64], l: &[f64], u: &[f64]) -> QuadraticProgram {
        let n = q.len();
        let m = l.len();
        QuadraticProgram::new(
            DMatrix::from_row_slice(n, n, p),
            DVector::from_row_slice(q),
            DMatrix::from_row_slice(m, n, a),
            DVector::from_row_slice(l),
            DVector::from_row_slice(u),
        )
        .unwrap()
    }

    #[test]
    fn active_lower_bound() {
        // min x^2 s.t. x >= 1
        let qp = qp1(&[2.0], &[0.0], &[1.0], &[1.0], &[f64::INFINITY]);
        let s = solve(&qp, 1e-5, 1e-5, 4000).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn equality_example() {
        let qp = qp1(&[1.0, 0.0, 0.0, 1.0], &[-1.0, -1.0], &[1.0, 1.0], &[1.0], &[1.0]);
        let s = solve(&qp, 1e-5, 1e-5, 4000).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert_relative_eq!(s.x[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(s.x[1], 0.5, epsilon = 1e-8);
        let r = kkt_check(&qp, &s.x, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
        let off = s.x.add_scalar(0.1);
        let r = kkt_check(&qp, &off, 1e-8).unwrap();
        assert_relative_eq!(r.feasibility, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let qp = qp1(&[2.0], &[0.0], &[1.0, 1.0], &[1.0, f64::NEG_INFINITY], &[f64::INFINITY, 0.0]);
        let s = solve(&qp, 1e-5, 1e-5, 4000).unwrap();
        assert_eq!(s.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn unbounded_is_dual_infeasible() {
        let qp = qp1(&[0.0], &[-1.0], &[1.0], &[0.0], &[f64::INFINITY]);
        let s = solve(&qp, 1e-5, 1e-5, 4000).unwrap();
        assert_eq!(s.status, QpStatus::DualInfeasible);
    }

    #[test]
    fn unconstrained_minimum_is_stationary() {
        let qp = qp1(&[4.0, 1.0, 1.0, 3.0], &[1.0, 2.0], &[], &[], &[]);
        let s = solve(&qp, 1e-5, 1e-5, 4000).unwrap();
        let r = kkt_check(&qp, &s.x, 1e-8).unwrap();
        assert!(r.stationarity < 1e-8);
    }

    #[test]
    fn rejects_bad_problems() {
        let bad = QuadraticProgram::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        );
        assert!(bad.is_err());
        let indefinite = QuadraticProgram::new(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::zeros(0),
        );
        assert!(indefinite.is_err());
        let shape = QuadraticProgram::new(
            DMatrix::identity(2, 2),
            DVector::zeros(3),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        );
        assert!(matches!(shape, Err(Error::Dimension(_))));
    }

    #[test]
    fn text_dump_round_trip() {
        let qp = qp1(&[1.0, 0.0, 0.0, 1.0], &[-1.0, -1.0], &[1.0, 1.0], &[1.0], &[f64::INFINITY]);
        let mut buf = Vec::new();
        qp.write_text(&mut buf).unwrap();
        let back = QuadraticProgram::read_text(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, qp);
    }
}
