//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling.
//!
//! The problem is converted to the standard form
//!
//! ```text
//! minimize  ⟨c, x⟩   subject to  A x = b,  x ∈ K
//! ```
//!
//! where `K` is a product of real PSD cones (one per Hermitian block, in the
//! doubled real embedding) and a nonnegative orthant (user scalars plus one
//! slack per inequality). Every step solves the Newton system through the
//! Schur complement `A H Aᵀ`, where `H(U) = W U W` is the NT scaling.
//! Rank-one coefficients are kept in factored form, so a Schur entry for two
//! such terms costs one entry of `Vᵀ W V`.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embed::{embed_hermitian, embed_rank_one, extract_hermitian, project_structured};
use crate::problem::{ConicProblem, ConicValues, HermitianTerm, Sense};
use crate::ConicError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Relative primal and dual residual tolerance.
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    /// Tolerance on normalized infeasibility certificates.
    pub tol_infeas: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// When progress stalls, a point meeting this looser tolerance on
    /// residuals and relative gap is still reported as optimal.
    pub tol_reduced: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 120,
            tol_feas: 1e-8,
            tol_gap_abs: 1e-10,
            tol_gap_rel: 1e-8,
            tol_infeas: 1e-9,
            step_fraction: 0.99,
            tol_reduced: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Primal infeasible, with a Farkas certificate.
    Infeasible,
    /// Dual infeasible (unbounded objective).
    Unbounded,
    MaxIterations,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        self == SolveStatus::Optimal
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    /// Relative primal residual of the returned point (standard form).
    pub primal_residual: f64,
    /// Relative dual residual of the returned point (standard form).
    pub dual_residual: f64,
    /// `|primal objective - dual objective|`.
    pub gap: f64,
    pub relative_gap: f64,
    /// Set when the point only meets `tol_reduced`.
    pub reduced_accuracy: bool,
    pub solve_time_ms: f64,
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub objective_value: f64,
    /// Dual objective `bᵀy` in the original scaling.
    pub dual_objective: f64,
    pub values: ConicValues,
    /// One multiplier per constraint, in the original scaling.
    pub duals: Vec<f64>,
    pub stats: SolverStats,
}

/// Solves `problem` with default settings.
pub fn solve(problem: &ConicProblem) -> Result<ConicSolution, ConicError> {
    solve_with(problem, &SolverSettings::default())
}

pub fn solve_with(
    problem: &ConicProblem,
    settings: &SolverSettings,
) -> Result<ConicSolution, ConicError> {
    problem.validate()?;
    let start = Instant::now();
    let sf = StandardForm::build(problem);
    let mut ipm = Ipm::new(&sf, settings);
    let (status, iterations) = ipm.run();
    let mut sol = ipm.extract(problem, status, iterations);
    sol.stats.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(sol)
}

// ---------------------------------------------------------------------------
// standard form

struct PsdData {
    n: usize,
    /// Rank-one factors `v_r` as columns.
    v: DMatrix<f64>,
    coef: Vec<f64>,
    row: Vec<usize>,
    ident: Vec<(usize, f64)>,
    dense: Vec<(usize, DMatrix<f64>)>,
    cost: Option<DMatrix<f64>>,
}

impl PsdData {
    fn apply(&self, x: &DMatrix<f64>, out: &mut DVector<f64>) {
        if !self.coef.is_empty() {
            let xv = x * &self.v;
            for r in 0..self.coef.len() {
                out[self.row[r]] += self.coef[r] * self.v.column(r).dot(&xv.column(r));
            }
        }
        if !self.ident.is_empty() {
            let tr = x.trace();
            for &(i, a) in &self.ident {
                out[i] += a * tr;
            }
        }
        for (i, d) in &self.dense {
            out[*i] += d.dot(x);
        }
    }

    fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n, self.n);
        if !self.coef.is_empty() {
            let mut scaled = self.v.clone();
            for r in 0..self.coef.len() {
                let f = self.coef[r] * y[self.row[r]];
                scaled.column_mut(r).scale_mut(f);
            }
            s.gemm(1.0, &scaled, &self.v.transpose(), 0.0);
        }
        for &(i, a) in &self.ident {
            for k in 0..self.n {
                s[(k, k)] += a * y[i];
            }
        }
        for (i, d) in &self.dense {
            s += d * y[*i];
        }
        s
    }

    fn cost_dot(&self, x: &DMatrix<f64>) -> f64 {
        self.cost.as_ref().map_or(0.0, |c| c.dot(x))
    }

    /// Adds this block's contribution `A_i • W A_j W` to the Schur matrix,
    /// with `W = R Rᵀ`. Every entry is an inner product of `Rᵀ A_i R`
    /// terms; forming `W` itself would bury its small eigendirections
    /// under round-off from the large ones.
    fn schur(&self, r: &DMatrix<f64>, m: &mut DMatrix<f64>) {
        let nr = self.coef.len();
        let rv = if nr > 0 { Some(r.tr_mul(&self.v)) } else { None };
        if let Some(rv) = &rv {
            let g = rv.tr_mul(rv);
            for s in 0..nr {
                let cs = self.coef[s];
                let rs = self.row[s];
                for t in 0..nr {
                    let gst = g[(s, t)];
                    m[(rs, self.row[t])] += cs * self.coef[t] * gst * gst;
                }
            }
        }
        let dt: Vec<DMatrix<f64>> = self.dense.iter().map(|(_, d)| r.tr_mul(d) * r).collect();
        if !self.ident.is_empty() {
            let g = r.tr_mul(r);
            if let Some(rv) = &rv {
                let grv = &g * rv;
                for s in 0..nr {
                    let q = rv.column(s).dot(&grv.column(s)) * self.coef[s];
                    for &(i, a) in &self.ident {
                        m[(i, self.row[s])] += a * q;
                        m[(self.row[s], i)] += a * q;
                    }
                }
            }
            let tr_w2 = g.norm_squared();
            for &(i, a) in &self.ident {
                for &(j, b) in &self.ident {
                    m[(i, j)] += a * b * tr_w2;
                }
                for ((j, _), d) in self.dense.iter().zip(&dt) {
                    let val = a * d.dot(&g);
                    m[(i, *j)] += val;
                    m[(*j, i)] += val;
                }
            }
        }
        for (a, (i, _)) in self.dense.iter().enumerate() {
            if let Some(rv) = &rv {
                let drv = &dt[a] * rv;
                for s in 0..nr {
                    let val = self.coef[s] * rv.column(s).dot(&drv.column(s));
                    m[(*i, self.row[s])] += val;
                    m[(self.row[s], *i)] += val;
                }
            }
            for (b, (j, _)) in self.dense.iter().enumerate() {
                m[(*i, *j)] += dt[a].dot(&dt[b]);
            }
        }
    }
}

struct StandardForm {
    m: usize,
    psd: Vec<PsdData>,
    /// Column-wise sparse coefficients of the nonnegative variables.
    lp_cols: Vec<Vec<(usize, f64)>>,
    lp_cost: DVector<f64>,
    b: DVector<f64>,
    /// Multiplier applied to each original row.
    row_scale: Vec<f64>,
    n_user_scalars: usize,
}

impl StandardForm {
    fn build(problem: &ConicProblem) -> Self {
        let m = problem.constraints.len();
        let n_slack = problem
            .constraints
            .iter()
            .filter(|c| c.sense != Sense::Eq)
            .count();
        let n_lp = problem.scalars.len() + n_slack;

        // collect terms per block
        let mut factors: Vec<Vec<(usize, f64, DVector<f64>)>> = vec![Vec::new(); problem.blocks.len()];
        let mut ident: Vec<Vec<(usize, f64)>> = vec![Vec::new(); problem.blocks.len()];
        let mut dense: Vec<Vec<(usize, DMatrix<f64>)>> = vec![Vec::new(); problem.blocks.len()];
        let mut lp_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_lp];
        let mut b = DVector::zeros(m);
        let mut row_norm2 = vec![0.0; m];
        let mut slack = problem.scalars.len();

        for (i, c) in problem.constraints.iter().enumerate() {
            for t in &c.expr.block_terms {
                let bi = t.block.0;
                let n = problem.blocks[bi].dim;
                match &t.term {
                    HermitianTerm::RankOne { coef, v } => {
                        let (u, w) = embed_rank_one(v);
                        let nv = u.norm_squared();
                        row_norm2[i] += (coef * nv).powi(2);
                        factors[bi].push((i, 0.5 * coef, u));
                        factors[bi].push((i, 0.5 * coef, w));
                    }
                    HermitianTerm::Identity { coef } => {
                        row_norm2[i] += coef * coef * n as f64;
                        ident[bi].push((i, 0.5 * coef));
                    }
                    HermitianTerm::Dense { .. } => {
                        let d = embed_hermitian(&t.term.to_matrix(n)) * 0.5;
                        row_norm2[i] += 2.0 * d.norm_squared();
                        dense[bi].push((i, d));
                    }
                }
            }
            for (s, a) in &c.expr.scalar_terms {
                row_norm2[i] += a * a;
                lp_cols[s.0].push((i, *a));
            }
            match c.sense {
                Sense::Eq => {}
                Sense::Geq => {
                    lp_cols[slack].push((i, -1.0));
                    row_norm2[i] += 1.0;
                    slack += 1;
                }
                Sense::Leq => {
                    lp_cols[slack].push((i, 1.0));
                    row_norm2[i] += 1.0;
                    slack += 1;
                }
            }
            b[i] = c.rhs;
        }

        let row_scale: Vec<f64> = row_norm2
            .iter()
            .map(|&n2| if n2 > 0.0 { 1.0 / n2.sqrt() } else { 1.0 })
            .collect();
        for i in 0..m {
            b[i] *= row_scale[i];
        }
        for col in lp_cols.iter_mut() {
            for (i, a) in col.iter_mut() {
                *a *= row_scale[*i];
            }
        }

        let mut block_cost: Vec<Option<DMatrix<f64>>> = vec![None; problem.blocks.len()];
        let mut lp_cost = DVector::zeros(n_lp);
        for t in &problem.objective.block_terms {
            let n = problem.blocks[t.block.0].dim;
            let d = embed_hermitian(&t.term.to_matrix(n)) * 0.5;
            let slot = &mut block_cost[t.block.0];
            match slot {
                Some(c) => *c += d,
                None => *slot = Some(d),
            }
        }
        for (s, a) in &problem.objective.scalar_terms {
            lp_cost[s.0] += a;
        }

        let psd = problem
            .blocks
            .iter()
            .enumerate()
            .map(|(bi, blk)| {
                let n = 2 * blk.dim;
                let fs = std::mem::take(&mut factors[bi]);
                let mut v = DMatrix::zeros(n, fs.len());
                let mut coef = Vec::with_capacity(fs.len());
                let mut row = Vec::with_capacity(fs.len());
                for (r, (i, c, vec)) in fs.into_iter().enumerate() {
                    v.set_column(r, &vec);
                    coef.push(c * row_scale[i]);
                    row.push(i);
                }
                PsdData {
                    n,
                    v,
                    coef,
                    row,
                    ident: ident[bi].iter().map(|&(i, a)| (i, a * row_scale[i])).collect(),
                    dense: std::mem::take(&mut dense[bi])
                        .into_iter()
                        .map(|(i, d)| (i, d * row_scale[i]))
                        .collect(),
                    cost: block_cost[bi].take(),
                }
            })
            .collect();

        StandardForm {
            m,
            psd,
            lp_cols,
            lp_cost,
            b,
            row_scale,
            n_user_scalars: problem.scalars.len(),
        }
    }

    fn n_lp(&self) -> usize {
        self.lp_cols.len()
    }

    fn degree(&self) -> f64 {
        (self.psd.iter().map(|p| p.n).sum::<usize>() + self.n_lp()) as f64
    }

    fn apply(&self, x: &Vars) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (p, xb) in self.psd.iter().zip(&x.blocks) {
            p.apply(xb, &mut out);
        }
        for (col, &xl) in self.lp_cols.iter().zip(x.lp.iter()) {
            for &(i, a) in col {
                out[i] += a * xl;
            }
        }
        out
    }

    fn adjoint(&self, y: &DVector<f64>) -> Vars {
        Vars {
            blocks: self.psd.iter().map(|p| p.adjoint(y)).collect(),
            lp: DVector::from_iterator(
                self.n_lp(),
                self.lp_cols
                    .iter()
                    .map(|col| col.iter().map(|&(i, a)| a * y[i]).sum::<f64>()),
            ),
        }
    }

    fn cost(&self) -> Vars {
        Vars {
            blocks: self
                .psd
                .iter()
                .map(|p| p.cost.clone().unwrap_or_else(|| DMatrix::zeros(p.n, p.n)))
                .collect(),
            lp: self.lp_cost.clone(),
        }
    }

    fn cost_dot(&self, x: &Vars) -> f64 {
        self.psd
            .iter()
            .zip(&x.blocks)
            .map(|(p, xb)| p.cost_dot(xb))
            .sum::<f64>()
            + self.lp_cost.dot(&x.lp)
    }
}

// ---------------------------------------------------------------------------
// iterates

#[derive(Clone, Debug)]
struct Vars {
    blocks: Vec<DMatrix<f64>>,
    lp: DVector<f64>,
}

impl Vars {
    fn identity(sf: &StandardForm) -> Self {
        Vars {
            blocks: sf.psd.iter().map(|p| DMatrix::identity(p.n, p.n)).collect(),
            lp: DVector::from_element(sf.n_lp(), 1.0),
        }
    }

    fn dot(&self, o: &Vars) -> f64 {
        self.blocks
            .iter()
            .zip(&o.blocks)
            .map(|(a, b)| a.dot(b))
            .sum::<f64>()
            + self.lp.dot(&o.lp)
    }

    fn axpy(&mut self, a: f64, o: &Vars) {
        for (x, y) in self.blocks.iter_mut().zip(&o.blocks) {
            *x += y * a;
        }
        self.lp.axpy(a, &o.lp, 1.0);
    }

    fn scaled(&self, a: f64) -> Vars {
        Vars {
            blocks: self.blocks.iter().map(|b| b * a).collect(),
            lp: &self.lp * a,
        }
    }

    fn sub(&self, o: &Vars) -> Vars {
        let mut out = self.clone();
        out.axpy(-1.0, o);
        out
    }

    fn max_abs(&self) -> f64 {
        let b = self.blocks.iter().map(|m| m.amax()).fold(0.0, f64::max);
        if self.lp.is_empty() {
            b
        } else {
            b.max(self.lp.amax())
        }
    }

    fn project(&mut self) {
        for b in self.blocks.iter_mut() {
            project_structured(b);
        }
    }
}

struct BlockScaling {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lambda: DVector<f64>,
}

struct Scaling {
    blocks: Vec<BlockScaling>,
    lp_w: DVector<f64>,
    lp_lambda: DVector<f64>,
}

fn nt_block(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<BlockScaling> {
    let lx = Cholesky::new(x.clone())?.l();
    let lz = Cholesky::new(z.clone())?.l();
    let svd = (lx.transpose() * &lz).svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let lambda = svd.singular_values;
    if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return None;
    }
    let n = lambda.len();
    let mut r = lx * u;
    for j in 0..n {
        r.column_mut(j).scale_mut(1.0 / lambda[j].sqrt());
    }
    let mut rinv = vt * lz.transpose();
    for i in 0..n {
        rinv.row_mut(i).scale_mut(1.0 / lambda[i].sqrt());
    }
    Some(BlockScaling { r, rinv, lambda })
}

impl Scaling {
    fn new(x: &Vars, z: &Vars) -> Option<Self> {
        let blocks = x
            .blocks
            .iter()
            .zip(&z.blocks)
            .map(|(xb, zb)| nt_block(xb, zb))
            .collect::<Option<Vec<_>>>()?;
        let lp_w = x.lp.zip_map(&z.lp, |a, b| (a / b).sqrt());
        let lp_lambda = x.lp.zip_map(&z.lp, |a, b| (a * b).sqrt());
        Some(Scaling { blocks, lp_w, lp_lambda })
    }

    /// `H(u) = W u W` blockwise, evaluated as `R (Rᵀ u R) Rᵀ` without forming `W`.
    fn h(&self, u: &Vars) -> Vars {
        Vars {
            blocks: self
                .blocks
                .iter()
                .zip(&u.blocks)
                .map(|(s, ub)| &s.r * (s.r.tr_mul(ub) * &s.r) * s.r.transpose())
                .collect(),
            lp: u.lp.component_mul(&self.lp_w).component_mul(&self.lp_w),
        }
    }
}

/// Complementarity right-hand side in the scaled space.
struct CompRhs {
    blocks: Vec<DMatrix<f64>>,
    lp: DVector<f64>,
    tau: f64,
}

struct Direction {
    x: Vars,
    y: DVector<f64>,
    z: Vars,
    tau: f64,
    kappa: f64,
}

struct Ipm<'a> {
    sf: &'a StandardForm,
    settings: &'a SolverSettings,
    x: Vars,
    y: DVector<f64>,
    z: Vars,
    tau: f64,
    kappa: f64,
    c: Vars,
    nu: f64,
    last: Residuals,
    reduced: bool,
}

#[derive(Clone, Copy, Debug, Default)]
struct Residuals {
    pres: f64,
    dres: f64,
    gap: f64,
    rel_gap: f64,
    pobj: f64,
    dobj: f64,
}

fn cholesky_regularized(m: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(1e-300, f64::max);
    let mut delta = 1e-14 * scale;
    for _ in 0..12 {
        let mut reg = m.clone();
        for i in 0..m.nrows() {
            reg[(i, i)] += delta;
        }
        if let Some(c) = Cholesky::new(reg) {
            return Some(c);
        }
        delta *= 10.0;
    }
    None
}

/// Largest `α ≤ 1/ε` with `Λ + α D ⪰ 0`, given `D` in the scaled space.
fn max_step_psd(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let s = DMatrix::from_fn(n, n, |i, j| {
        0.5 * (d[(i, j)] + d[(j, i)]) / (lambda[i] * lambda[j]).sqrt()
    });
    let emin = SymmetricEigen::new(s).eigenvalues.min();
    if emin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / emin
    }
}

/// Largest `α` with `X + α D ⪰ 0`, measured through the Cholesky factor of
/// `X` itself rather than the scaling point.
fn max_step_direct(x: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(t) = l.solve_lower_triangular(d) else {
        return 0.0;
    };
    let Some(s) = l.solve_lower_triangular(&t.transpose()) else {
        return 0.0;
    };
    let s = (&s + s.transpose()) * 0.5;
    let emin = SymmetricEigen::new(s).eigenvalues.min();
    if emin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / emin
    }
}

fn interior(v: &Vars) -> bool {
    v.lp.iter().all(|&x| x > 0.0)
        && v.blocks.iter().all(|b| Cholesky::new(b.clone()).is_some())
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

impl<'a> Ipm<'a> {
    fn new(sf: &'a StandardForm, settings: &'a SolverSettings) -> Self {
        Ipm {
            sf,
            settings,
            x: Vars::identity(sf),
            y: DVector::zeros(sf.m),
            z: Vars::identity(sf),
            tau: 1.0,
            kappa: 1.0,
            c: sf.cost(),
            nu: sf.degree(),
            last: Residuals::default(),
            reduced: false,
        }
    }

    fn residuals(&self) -> Residuals {
        let sf = self.sf;
        let ax = sf.apply(&self.x);
        let aty = sf.adjoint(&self.y);
        let inv = 1.0 / self.tau;
        let bnorm = sf.b.amax().max(1.0);
        let cnorm = self.c.max_abs().max(1.0);
        let pres = (&ax * inv - &sf.b).amax() / bnorm;
        let mut d = aty.scaled(inv);
        d.axpy(inv, &self.z);
        d.axpy(-1.0, &self.c);
        let dres = d.max_abs() / cnorm;
        let pobj = sf.cost_dot(&self.x) * inv;
        let dobj = sf.b.dot(&self.y) * inv;
        let gap = (pobj - dobj).abs();
        let rel_gap = gap / pobj.abs().max(dobj.abs()).max(1.0);
        Residuals { pres, dres, gap, rel_gap, pobj, dobj }
    }

    fn converged(&self, r: &Residuals) -> bool {
        let s = self.settings;
        r.pres <= s.tol_feas
            && r.dres <= s.tol_feas
            && (r.gap <= s.tol_gap_abs || r.rel_gap <= s.tol_gap_rel)
    }

    fn infeasibility(&self) -> Option<SolveStatus> {
        let sf = self.sf;
        let tol = self.settings.tol_infeas;
        let by = sf.b.dot(&self.y);
        if by > 0.0 {
            let mut r = sf.adjoint(&self.y);
            r.axpy(1.0, &self.z);
            if r.max_abs() / by <= tol {
                return Some(SolveStatus::Infeasible);
            }
        }
        let cx = sf.cost_dot(&self.x);
        if cx < 0.0 {
            let ax = sf.apply(&self.x);
            if ax.amax() / (-cx) <= tol {
                return Some(SolveStatus::Unbounded);
            }
        }
        None
    }

    fn schur(&self, sc: &Scaling) -> DMatrix<f64> {
        let m = self.sf.m;
        let mut mat = DMatrix::zeros(m, m);
        for (p, s) in self.sf.psd.iter().zip(&sc.blocks) {
            p.schur(&s.r, &mut mat);
        }
        for (l, col) in self.sf.lp_cols.iter().enumerate() {
            let d = sc.lp_w[l] * sc.lp_w[l];
            for &(i, a) in col {
                for &(j, b) in col {
                    mat[(i, j)] += a * b * d;
                }
            }
        }
        mat
    }

    fn run(&mut self) -> (SolveStatus, usize) {
        let max_it = self.settings.max_iterations;
        let mut small_steps = 0;
        let mut best = f64::INFINITY;
        let mut no_progress = 0;
        for it in 0..max_it {
            let r = self.residuals();
            self.last = r;
            let merit = r.pres.max(r.dres).max(r.rel_gap);
            if merit < 0.5 * best {
                best = merit;
                no_progress = 0;
            } else {
                no_progress += 1;
                if no_progress >= 5 && merit <= self.settings.tol_reduced {
                    return (self.stalled(&r, SolveStatus::NumericalFailure), it);
                }
            }
            log::trace!(
                "it {it:3} pres {:.2e} dres {:.2e} gap {:.2e} pobj {:.8e} dobj {:.8e} tau {:.2e} kappa {:.2e}",
                r.pres, r.dres, r.gap, r.pobj, r.dobj, self.tau, self.kappa
            );
            if self.converged(&r) {
                return (SolveStatus::Optimal, it);
            }
            if let Some(st) = self.infeasibility() {
                return (st, it);
            }
            let alpha = match self.step() {
                Some(a) => a,
                None => return (self.stalled(&r, SolveStatus::NumericalFailure), it),
            };
            if alpha < 1e-9 {
                small_steps += 1;
                if small_steps >= 3 {
                    return (self.stalled(&r, SolveStatus::NumericalFailure), it);
                }
            } else {
                small_steps = 0;
            }
        }
        let r = self.residuals();
        self.last = r;
        if self.converged(&r) {
            (SolveStatus::Optimal, max_it)
        } else {
            (self.stalled(&r, SolveStatus::MaxIterations), max_it)
        }
    }

    fn stalled(&mut self, r: &Residuals, otherwise: SolveStatus) -> SolveStatus {
        let t = self.settings.tol_reduced;
        if r.pres <= t && r.dres <= t && r.rel_gap <= t {
            self.reduced = true;
            SolveStatus::Optimal
        } else {
            otherwise
        }
    }

    /// One predictor-corrector step. Returns the step length taken.
    fn step(&mut self) -> Option<f64> {
        let sf = self.sf;
        let sc = Scaling::new(&self.x, &self.z)?;
        let mu = (self.x.dot(&self.z) + self.tau * self.kappa) / (self.nu + 1.0);

        let mut mmat = self.schur(&sc);
        // keep the Schur matrix symmetric against round-off
        let mt = mmat.transpose();
        mmat = (mmat + mt) * 0.5;
        let chol = cholesky_regularized(&mmat)?;
        // two rounds of iterative refinement against the unregularized matrix
        let schur_solve = |r: &DVector<f64>| -> DVector<f64> {
            let mut x = chol.solve(r);
            for _ in 0..2 {
                let res = r - &mmat * &x;
                x += chol.solve(&res);
            }
            x
        };

        // residuals of the homogeneous system
        let ax = sf.apply(&self.x);
        let rp = &ax - &sf.b * self.tau;
        let mut rd = sf.adjoint(&self.y);
        rd.axpy(1.0, &self.z);
        rd.axpy(-self.tau, &self.c);
        let rg = sf.b.dot(&self.y) - sf.cost_dot(&self.x) - self.kappa;

        // solution component proportional to dτ
        let hc = sc.h(&self.c);
        let q = schur_solve(&(&sf.b + sf.apply(&hc)));
        let dx_q = sc.h(&sf.adjoint(&q).sub(&self.c));
        let denom = sf.b.dot(&q) - sf.cost_dot(&dx_q) + self.kappa / self.tau;

        let solve = |eta: f64, comp: &CompRhs| -> Direction {
            let r1 = &rp * (-eta);
            let r2 = rd.scaled(-eta);
            let r3 = -eta * rg;
            // Ψ = R E Rᵀ where λ∘E = comp
            let psi = Vars {
                blocks: sc
                    .blocks
                    .iter()
                    .zip(&comp.blocks)
                    .map(|(s, cb)| {
                        let n = s.lambda.len();
                        let e = DMatrix::from_fn(n, n, |i, j| {
                            2.0 * cb[(i, j)] / (s.lambda[i] + s.lambda[j])
                        });
                        &s.r * e * s.r.transpose()
                    })
                    .collect(),
                lp: comp
                    .lp
                    .component_div(&sc.lp_lambda)
                    .component_mul(&sc.lp_w),
            };
            let t = psi.sub(&sc.h(&r2));
            let p = schur_solve(&(&r1 - sf.apply(&t)));
            // H applied once to the combined dual term avoids cancellation
            let mut dx = psi.sub(&sc.h(&r2.sub(&sf.adjoint(&p))));
            let dtau = (r3 - sf.b.dot(&p) + sf.cost_dot(&dx) + comp.tau / self.tau) / denom;
            let dy = &p + &q * dtau;
            dx.axpy(dtau, &dx_q);
            let mut dz = r2;
            dz.axpy(-1.0, &sf.adjoint(&dy));
            dz.axpy(dtau, &self.c);
            let dkappa = (comp.tau - self.kappa * dtau) / self.tau;
            Direction { x: dx, y: dy, z: dz, tau: dtau, kappa: dkappa }
        };

        let lambda_sq = |sigma_mu: f64| CompRhs {
            blocks: sc
                .blocks
                .iter()
                .map(|s| {
                    let n = s.lambda.len();
                    DMatrix::from_fn(n, n, |i, j| {
                        if i == j {
                            sigma_mu - s.lambda[i] * s.lambda[i]
                        } else {
                            0.0
                        }
                    })
                })
                .collect(),
            lp: sc.lp_lambda.map(|l| sigma_mu - l * l),
            tau: sigma_mu - self.tau * self.kappa,
        };

        // predictor
        let aff = solve(1.0, &lambda_sq(0.0));
        let (ax_s, az_s) = self.scaled_dirs(&sc, &aff);
        let alpha_aff = self.max_step(&sc, &ax_s, &az_s, &aff).min(1.0);
        let mut xa = self.x.clone();
        xa.axpy(alpha_aff, &aff.x);
        let mut za = self.z.clone();
        za.axpy(alpha_aff, &aff.z);
        let mu_aff = (xa.dot(&za)
            + (self.tau + alpha_aff * aff.tau) * (self.kappa + alpha_aff * aff.kappa))
            / (self.nu + 1.0);
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector with second-order term
        let mut comp = lambda_sq(sigma * mu);
        for (cb, (dxs, dzs)) in comp.blocks.iter_mut().zip(ax_s.iter().zip(&az_s)) {
            let prod = dxs * dzs;
            let jordan = (&prod + prod.transpose()) * 0.5;
            *cb -= jordan;
        }
        comp.lp -= aff.x.lp.component_mul(&aff.z.lp);
        comp.tau -= aff.tau * aff.kappa;
        let mut dir = solve(1.0 - sigma, &comp);
        dir.x.project();
        dir.z.project();
        let alpha_max = self.max_step_exact(&dir);
        let alpha = (self.settings.step_fraction * alpha_max).min(1.0);

        // backtrack until both iterates admit a Cholesky factorization
        let mut alpha = alpha;
        for _ in 0..30 {
            let mut x = self.x.clone();
            x.axpy(alpha, &dir.x);
            x.project();
            let mut z = self.z.clone();
            z.axpy(alpha, &dir.z);
            z.project();
            let tau = self.tau + alpha * dir.tau;
            let kappa = self.kappa + alpha * dir.kappa;
            if tau > 0.0 && kappa > 0.0 && interior(&x) && interior(&z) {
                self.x = x;
                self.z = z;
                self.y.axpy(alpha, &dir.y, 1.0);
                self.tau = tau;
                self.kappa = kappa;
                return Some(alpha);
            }
            alpha *= 0.7;
        }
        None
    }

    /// Directions in the scaled space: `R⁻¹ dX R⁻ᵀ` and `Rᵀ dZ R`.
    fn scaled_dirs(&self, sc: &Scaling, d: &Direction) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let xs = sc
            .blocks
            .iter()
            .zip(&d.x.blocks)
            .map(|(s, dx)| &s.rinv * dx * s.rinv.transpose())
            .collect();
        let zs = sc
            .blocks
            .iter()
            .zip(&d.z.blocks)
            .map(|(s, dz)| s.r.transpose() * dz * &s.r)
            .collect();
        (xs, zs)
    }

    fn max_step_exact(&self, d: &Direction) -> f64 {
        let mut a = f64::INFINITY;
        for (x, dx) in self.x.blocks.iter().zip(&d.x.blocks) {
            a = a.min(max_step_direct(x, dx));
        }
        for (z, dz) in self.z.blocks.iter().zip(&d.z.blocks) {
            a = a.min(max_step_direct(z, dz));
        }
        a = a.min(max_step_lp(&self.x.lp, &d.x.lp));
        a = a.min(max_step_lp(&self.z.lp, &d.z.lp));
        if d.tau < 0.0 {
            a = a.min(-self.tau / d.tau);
        }
        if d.kappa < 0.0 {
            a = a.min(-self.kappa / d.kappa);
        }
        a
    }

    fn max_step(&self, sc: &Scaling, dxs: &[DMatrix<f64>], dzs: &[DMatrix<f64>], d: &Direction) -> f64 {
        let mut a = f64::INFINITY;
        for (s, (dx, dz)) in sc.blocks.iter().zip(dxs.iter().zip(dzs)) {
            a = a.min(max_step_psd(&s.lambda, dx));
            a = a.min(max_step_psd(&s.lambda, dz));
        }
        a = a.min(max_step_lp(&self.x.lp, &d.x.lp));
        a = a.min(max_step_lp(&self.z.lp, &d.z.lp));
        if d.tau < 0.0 {
            a = a.min(-self.tau / d.tau);
        }
        if d.kappa < 0.0 {
            a = a.min(-self.kappa / d.kappa);
        }
        a
    }

    fn extract(&self, problem: &ConicProblem, status: SolveStatus, iterations: usize) -> ConicSolution {
        let sf = self.sf;
        // certificates are reported unnormalized; primal-dual points divided by τ
        let inv = match status {
            SolveStatus::Infeasible | SolveStatus::Unbounded => 1.0,
            _ => 1.0 / self.tau,
        };
        let values = ConicValues {
            blocks: self
                .x
                .blocks
                .iter()
                .map(|b| extract_hermitian(&(b * inv)))
                .collect(),
            scalars: self.x.lp.iter().take(sf.n_user_scalars).map(|v| v * inv).collect(),
        };
        let duals: Vec<f64> = self
            .y
            .iter()
            .zip(&sf.row_scale)
            .map(|(y, s)| y * inv * s)
            .collect();
        let dual_objective = problem
            .constraints
            .iter()
            .zip(&duals)
            .map(|(c, y)| c.rhs * y)
            .sum();
        let r = self.last;
        ConicSolution {
            status,
            objective_value: problem.objective_value(&values),
            dual_objective,
            values,
            duals,
            stats: SolverStats {
                iterations,
                primal_residual: r.pres,
                dual_residual: r.dres,
                gap: r.gap,
                relative_gap: r.rel_gap,
                reduced_accuracy: self.reduced,
                solve_time_ms: 0.0,
            },
        }
    }
}
