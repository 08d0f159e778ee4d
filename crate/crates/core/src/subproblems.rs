//! The convex programs: fixed-trajectory design (upper bounds, baselines)
//! and support-relaxed design (lower bounds), plus rank-one recovery.
//!
//! Both problem kinds come from one builder that takes, per snapshot, the
//! list of grid indices the covariances may touch. A fixed trajectory
//! passes its selections (so blocks are `M × M` in element order); a
//! relaxation passes the sorted support `Ĩ[n]`, which is the compressed
//! form of the `J × J` variables whose rows and columns outside the support
//! are zero.
//!
//! Variables: `W_k[n]` of order `|list_n|`, `R` of order `Σ_n |list_n|`,
//! `η ≥ 0` and a pair `p_i, q_i ≥ 0` per angle with
//! `η P̃_i − P_i − p_i + q_i = 0`, so that `p_i + q_i ≥ |η P̃_i − P_i|`
//! with equality at the optimum of `min Σ (p_i + q_i)`.

use std::collections::{BTreeSet, HashMap};

use maisac_conic::{
    solve_with, BlockId, ConicProblem, ConicSolution, HermitianTerm, LinearExpr, ScalarId, Sense,
    SolveStatus, SolverSettings, SolverStats,
};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beampattern::{ideal_pattern, AngularGrid, CovarianceDesign};
use crate::channel::{select, virtual_steering, EffectiveChannel};
use crate::grid::{reachable_set, MobilityParams, PositionGrid, Trajectory};
use crate::CoreError;

/// Frozen inputs of one design problem.
#[derive(Clone, Debug)]
pub struct InstanceData {
    pub grid: PositionGrid,
    pub mobility: MobilityParams,
    pub n_elements: usize,
    pub n_snapshots: usize,
    /// `B[0]`.
    pub initial: Vec<usize>,
    pub channels: Vec<EffectiveChannel>,
    pub angles: AngularGrid,
    /// `P̃_i`.
    pub ideal: Vec<f64>,
    /// Steering vector over all `J` positions for every angle.
    pub steering: Vec<Vec<Complex64>>,
    pub p_max: f64,
    pub sigma_s2: f64,
}

impl InstanceData {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: PositionGrid,
        mobility: MobilityParams,
        n_snapshots: usize,
        initial: Vec<usize>,
        channels: Vec<EffectiveChannel>,
        angles: AngularGrid,
        p_max: f64,
        sigma_s2: f64,
    ) -> Result<Self, CoreError> {
        let bad = |s: &str| Err(CoreError::InvalidParameter(s.to_string()));
        if initial.is_empty() {
            return bad("at least one antenna element is required");
        }
        if n_snapshots == 0 {
            return bad("at least one snapshot is required");
        }
        if !(p_max > 0.0) || !(sigma_s2 > 0.0) {
            return bad("power budget and symbol variance must be positive");
        }
        if initial.iter().any(|&j| j >= grid.len()) {
            return bad("initial position outside the grid");
        }
        if !crate::grid::min_distance_feasible(&initial, &grid, &mobility) {
            return bad("initial positions violate the minimum spacing");
        }
        for (k, ch) in channels.iter().enumerate() {
            if ch.user_id != k || ch.h_hat.len() != grid.len() {
                return bad("channels must be ordered by user id and cover every grid position");
            }
        }
        let ideal = ideal_pattern(&angles);
        let steering = angles.points.iter().map(|&p| virtual_steering(&grid, p)).collect();
        Ok(Self {
            n_elements: initial.len(),
            grid,
            mobility,
            n_snapshots,
            initial,
            channels,
            angles,
            ideal,
            steering,
            p_max,
            sigma_s2,
        })
    }

    pub fn n_users(&self) -> usize {
        self.channels.len()
    }

    /// Copy with a different number of snapshots.
    pub fn with_snapshots(&self, n: usize) -> Self {
        Self { n_snapshots: n, ..self.clone() }
    }
}

/// Per-snapshot index sets `Ĩ[n]` (sorted, unique).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    pub per_snapshot: Vec<Vec<usize>>,
}

impl SupportSet {
    pub fn new(per_snapshot: Vec<Vec<usize>>) -> Self {
        let per_snapshot = per_snapshot
            .into_iter()
            .map(|s| s.into_iter().collect::<BTreeSet<_>>().into_iter().collect())
            .collect();
        Self { per_snapshot }
    }

    /// `Ĩ = ∪_n Ĩ[n]`.
    pub fn union(&self) -> Vec<usize> {
        self.per_snapshot.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn is_subset_of(&self, other: &SupportSet) -> bool {
        self.per_snapshot.len() == other.per_snapshot.len()
            && self
                .per_snapshot
                .iter()
                .zip(&other.per_snapshot)
                .all(|(a, b)| a.iter().all(|j| b.binary_search(j).is_ok()))
    }

    /// Support of a search node whose first `prefix.len()` selections are
    /// fixed (layer order: snapshot-major, element-minor).
    ///
    /// An element fixed up to snapshot `f` keeps singletons there and may
    /// reach `reachable_set(anchor, n − f + 1)` afterwards, where the anchor
    /// is its last fixed position (or `B[0]`). The empty prefix gives the
    /// root relaxation.
    pub fn for_prefix(inst: &InstanceData, prefix: &[usize]) -> Self {
        let m = inst.n_elements;
        let n = inst.n_snapshots;
        let mut per: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for e in 0..m {
            let fixed: Vec<usize> = (0..n)
                .take_while(|s| s * m + e < prefix.len())
                .map(|s| prefix[s * m + e])
                .collect();
            for (s, &j) in fixed.iter().enumerate() {
                per[s].insert(j);
            }
            let anchor = fixed.last().copied().unwrap_or(inst.initial[e]);
            let f = fixed.len();
            for (s, set) in per.iter_mut().enumerate().skip(f) {
                set.extend(reachable_set(anchor, s - f + 1, &inst.grid, &inst.mobility));
            }
        }
        Self { per_snapshot: per.into_iter().map(|s| s.into_iter().collect()).collect() }
    }
}

/// Bijection between retained grid indices and compact block coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportMap {
    pub lists: Vec<Vec<usize>>,
    /// Offset of snapshot `n` inside the joint block.
    pub offsets: Vec<usize>,
    pub total: usize,
    lookup: Vec<HashMap<usize, usize>>,
}

pub fn compress_support(support: &SupportSet) -> Result<SupportMap, CoreError> {
    if support.per_snapshot.is_empty() || support.per_snapshot.iter().any(|s| s.is_empty()) {
        return Err(CoreError::InvalidInput("support must be nonempty in every snapshot".into()));
    }
    Ok(SupportMap::from_lists(support.per_snapshot.clone()))
}

impl SupportMap {
    fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len());
        let mut total = 0;
        for l in &lists {
            offsets.push(total);
            total += l.len();
        }
        let lookup = lists
            .iter()
            .map(|l| l.iter().enumerate().map(|(c, &j)| (j, c)).collect())
            .collect();
        Self { lists, offsets, total, lookup }
    }

    pub fn compact(&self, n: usize, j: usize) -> Option<usize> {
        self.lookup[n].get(&j).copied()
    }

    /// Embeds a compact per-snapshot block into a `J × J` matrix.
    pub fn expand_block(&self, n: usize, x: &DMatrix<Complex64>, j_total: usize) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(j_total, j_total);
        for (a, &ja) in self.lists[n].iter().enumerate() {
            for (b, &jb) in self.lists[n].iter().enumerate() {
                out[(ja, jb)] = x[(a, b)];
            }
        }
        out
    }

    /// Embeds a compact joint block into an `NJ × NJ` matrix.
    pub fn expand_joint(&self, x: &DMatrix<Complex64>, j_total: usize) -> DMatrix<Complex64> {
        let n = self.lists.len();
        let mut out = DMatrix::zeros(n * j_total, n * j_total);
        let global: Vec<usize> = self
            .lists
            .iter()
            .enumerate()
            .flat_map(|(s, l)| l.iter().map(move |&j| s * j_total + j))
            .collect();
        for (a, &ga) in global.iter().enumerate() {
            for (b, &gb) in global.iter().enumerate() {
                out[(ga, gb)] = x[(a, b)];
            }
        }
        out
    }
}

/// Variable handles of a built problem.
#[derive(Clone, Debug)]
pub struct Layout {
    pub map: SupportMap,
    /// `w[k][n]`.
    pub w: Vec<Vec<BlockId>>,
    pub r: BlockId,
    /// Absent when the ideal pattern is identically zero.
    pub eta: Option<ScalarId>,
    pub p: Vec<ScalarId>,
    pub q: Vec<ScalarId>,
}

fn build(inst: &InstanceData, lists: Vec<Vec<usize>>, zero_outside: Option<&SupportSet>) -> (ConicProblem, Layout) {
    let map = SupportMap::from_lists(lists);
    let n_snap = map.lists.len();
    let k_users = inst.n_users();
    let mut prob = ConicProblem::new();
    let w: Vec<Vec<BlockId>> = (0..k_users)
        .map(|k| (0..n_snap).map(|n| prob.add_block(format!("W{k}_{n}"), map.lists[n].len())).collect())
        .collect();
    let r = prob.add_block("R", map.total);
    let eta = inst.ideal.iter().any(|&t| t != 0.0).then(|| prob.add_scalar("eta"));
    let n_ang = inst.ideal.len();
    let p: Vec<ScalarId> = (0..n_ang).map(|i| prob.add_scalar(format!("p{i}"))).collect();
    let q: Vec<ScalarId> = (0..n_ang).map(|i| prob.add_scalar(format!("q{i}"))).collect();

    let mut obj = LinearExpr::new();
    for i in 0..n_ang {
        obj.push_scalar(p[i], 1.0);
        obj.push_scalar(q[i], 1.0);
    }
    prob.set_objective(obj);

    // η P̃_i − σ_s² Σ a_nᴴ W_k[n] a_n − a_Tᴴ R a_T − p_i + q_i = 0
    for i in 0..n_ang {
        let mut e = LinearExpr::new();
        let mut stacked = Vec::with_capacity(map.total);
        for n in 0..n_snap {
            let a = select(&inst.steering[i], &map.lists[n]);
            for wk in &w {
                e.push_block(wk[n], HermitianTerm::rank_one(-inst.sigma_s2, a.clone()));
            }
            stacked.extend(a);
        }
        e.push_block(r, HermitianTerm::rank_one(-1.0, stacked));
        if let Some(eta) = eta {
            if inst.ideal[i] != 0.0 {
                e.push_scalar(eta, inst.ideal[i]);
            }
        }
        e.push_scalar(p[i], -1.0);
        e.push_scalar(q[i], 1.0);
        prob.add_constraint(format!("angle{i}"), e, Sense::Eq, 0.0);
    }

    // SINR in linear form, divided by γσ²
    for (k, ch) in inst.channels.iter().enumerate() {
        let g = ch.sinr_target;
        let s = 1.0 / (g * ch.noise_power);
        for n in 0..n_snap {
            let h = select(&ch.h_hat, &map.lists[n]);
            let mut e = LinearExpr::new();
            e.push_block(w[k][n], HermitianTerm::rank_one(s, h.clone()));
            for (kk, wk) in w.iter().enumerate() {
                if kk != k {
                    e.push_block(wk[n], HermitianTerm::rank_one(-g * s, h.clone()));
                }
            }
            let mut padded = vec![Complex64::new(0.0, 0.0); map.total];
            padded[map.offsets[n]..map.offsets[n] + h.len()].copy_from_slice(&h);
            e.push_block(r, HermitianTerm::rank_one(-g * s, padded));
            prob.add_constraint(format!("sinr{k}_{n}"), e, Sense::Geq, 1.0);
        }
    }

    // power budget, divided by P_max
    let mut e = LinearExpr::new();
    for wk in &w {
        for &b in wk {
            e.push_block(b, HermitianTerm::Identity { coef: inst.sigma_s2 / inst.p_max });
        }
    }
    e.push_block(r, HermitianTerm::Identity { coef: 1.0 / inst.p_max });
    prob.add_constraint("power", e, Sense::Leq, 1.0);

    if let Some(support) = zero_outside {
        // Every entry of the removed rows is pinned. Pinning only the
        // diagonal leaves the off-diagonals free to O(√residual).
        for n in 0..n_snap {
            let off: Vec<bool> = map.lists[n].iter().map(|j| support.per_snapshot[n].binary_search(j).is_err()).collect();
            for wk in &w {
                zero_rows(&mut prob, wk[n], &off, &format!("zero_w{n}"));
            }
        }
        let off_r: Vec<bool> = (0..n_snap)
            .flat_map(|n| map.lists[n].iter().map(move |j| (n, j)))
            .map(|(n, j)| support.per_snapshot[n].binary_search(j).is_err())
            .collect();
        zero_rows(&mut prob, r, &off_r, "zero_r");
    }

    (prob, Layout { map, w, r, eta, p, q })
}

/// Adds `X(c, :) = 0` for every flagged `c`, each entry as its real and
/// imaginary part.
fn zero_rows(prob: &mut ConicProblem, block: BlockId, off: &[bool], label: &str) {
    let dim = off.len();
    let half = Complex64::new(0.5, 0.0);
    let half_i = Complex64::new(0.0, 0.5);
    for c in (0..dim).filter(|&c| off[c]) {
        for j in 0..dim {
            if off[j] && j < c {
                continue;
            }
            let mut re = DMatrix::zeros(dim, dim);
            if j == c {
                re[(c, c)] = Complex64::new(1.0, 0.0);
            } else {
                re[(c, j)] = half;
                re[(j, c)] = half;
            }
            prob.add_constraint(format!("{label}_{c}_{j}_re"), LinearExpr::new().block(block, HermitianTerm::dense(&re)), Sense::Eq, 0.0);
            if j != c {
                let mut im = DMatrix::zeros(dim, dim);
                im[(c, j)] = half_i;
                im[(j, c)] = -half_i;
                prob.add_constraint(format!("{label}_{c}_{j}_im"), LinearExpr::new().block(block, HermitianTerm::dense(&im)), Sense::Eq, 0.0);
            }
        }
    }
}

/// Fixed-trajectory problem with the rank-one constraint dropped.
pub fn build_fixed_trajectory_problem(
    inst: &InstanceData,
    trajectory: &Trajectory,
) -> Result<(ConicProblem, Layout), CoreError> {
    check_trajectory(inst, trajectory)?;
    Ok(build(inst, trajectory.selections.clone(), None))
}

fn check_trajectory(inst: &InstanceData, t: &Trajectory) -> Result<(), CoreError> {
    if t.n_snapshots() != inst.n_snapshots || t.initial != inst.initial {
        return Err(CoreError::InvalidInput("trajectory does not match the instance".into()));
    }
    t.check(&inst.grid, &inst.mobility)
        .map_err(|v| CoreError::InvalidInput(format!("infeasible trajectory: {v:?}")))
}

/// Relaxation over an explicit support (compressed form).
pub fn build_relaxed_problem(
    inst: &InstanceData,
    support: &SupportSet,
) -> Result<(ConicProblem, Layout), CoreError> {
    let map = compress_support(support)?;
    if map.lists.len() != inst.n_snapshots {
        return Err(CoreError::InvalidInput("support has the wrong number of snapshots".into()));
    }
    Ok(build(inst, map.lists, None))
}

/// Relaxation at a search node, with the support derived from its prefix.
pub fn build_node_problem(inst: &InstanceData, prefix: &[usize]) -> Result<(ConicProblem, Layout), CoreError> {
    build_relaxed_problem(inst, &SupportSet::for_prefix(inst, prefix))
}

/// Uncompressed relaxation: full `J`-sized blocks with the rows and
/// columns outside the support forced to zero by constraints. Used to check
/// that compression does not change the optimum.
pub fn build_relaxed_problem_uncompressed(
    inst: &InstanceData,
    support: &SupportSet,
) -> Result<(ConicProblem, Layout), CoreError> {
    compress_support(support)?;
    let full: Vec<usize> = (0..inst.grid.len()).collect();
    Ok(build(inst, vec![full; inst.n_snapshots], Some(support)))
}

/// Dominant eigenvector scaled by `√λ_1` and the ratio `λ_2 / λ_1`.
pub fn extract_rank_one(w: &DMatrix<Complex64>, tol: f64) -> (Vec<Complex64>, f64) {
    let n = w.nrows();
    if n == 0 {
        return (vec![], 0.0);
    }
    let h = (w + w.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l1 = eig.eigenvalues[order[0]];
    if l1 <= tol {
        return (vec![Complex64::new(0.0, 0.0); n], 0.0);
    }
    let l2 = if n > 1 { eig.eigenvalues[order[1]].max(0.0) } else { 0.0 };
    let v = eig.eigenvectors.column(order[0]);
    let s = l1.sqrt();
    (v.iter().map(|z| z * s).collect(), l2 / l1)
}

/// Rewrites each `W_k[n]` as `w wᴴ` with `w = W h / √(hᴴ W h)` and moves
/// `σ_s² (W − w wᴴ)` into the radar block `R[n]`.
///
/// `w wᴴ ⪯ W` and `hᴴ w wᴴ h = hᴴ W h`, so the user's signal is unchanged,
/// every beam gain and the total power are unchanged, and the interference
/// seen by the user grows by `hᴴ (W − w wᴴ) h = 0`. Other users see the same
/// interference when `σ_s² = 1`; for other symbol variances the design is
/// left untouched and `false` is returned.
pub fn tighten_rank_one(design: &mut CovarianceDesign, trajectory: &Trajectory, channels: &[EffectiveChannel]) -> bool {
    if (design.sigma_s2 - 1.0).abs() > 1e-12 {
        return false;
    }
    let m = trajectory.n_elements();
    for (k, ch) in channels.iter().enumerate() {
        for n in 0..trajectory.n_snapshots() {
            let h = nalgebra::DVector::from_vec(ch.restricted(&trajectory.selections[n]));
            let wmat = design.w[k][n].clone();
            let wh = &wmat * &h;
            let s = h.dotc(&wh).re;
            if !(s > 0.0) {
                continue;
            }
            let w = wh / Complex64::new(s.sqrt(), 0.0);
            let ww = &w * w.adjoint();
            let rest = (&wmat - &ww) * Complex64::new(design.sigma_s2, 0.0);
            let mut block = design.r.view_mut((n * m, n * m), (m, m));
            block += rest;
            design.w[k][n] = ww;
        }
    }
    true
}

/// Solver configuration used for every subproblem.
pub fn default_settings() -> SolverSettings {
    SolverSettings::default()
}

fn retry_settings() -> SolverSettings {
    SolverSettings { max_iterations: 250, step_fraction: 0.95, ..SolverSettings::default() }
}

/// Solves, retrying once with more conservative steps when the first
/// attempt neither converges nor certifies infeasibility.
pub fn solve_with_retry(problem: &ConicProblem) -> Result<ConicSolution, CoreError> {
    let first = solve_with(problem, &default_settings())?;
    if matches!(first.status, SolveStatus::Optimal | SolveStatus::Infeasible) {
        return Ok(first);
    }
    log::warn!("subproblem returned {:?}, retrying", first.status);
    Ok(solve_with(problem, &retry_settings())?)
}

/// Replaces the IPM's `p_i, q_i` by the tight pair implied by the rest of
/// the solution, read off the built angle rows, and returns `Σ (p_i + q_i)`.
///
/// The remaining variables are left as solved, so the result is the
/// epigraph objective of a primal point of the same program. It removes the
/// `2 min(p_i, q_i)` slack and equality residuals of the interior point,
/// which otherwise accumulate over the angular grid.
pub fn polish_epigraph(problem: &ConicProblem, layout: &Layout, sol: &mut ConicSolution) -> f64 {
    let mut total = 0.0;
    for (i, (p, q)) in layout.p.iter().zip(&layout.q).enumerate() {
        sol.values.scalars[p.0] = 0.0;
        sol.values.scalars[q.0] = 0.0;
        let row = &problem.constraints[i];
        debug_assert!(row.label == format!("angle{i}"));
        let g = row.expr.evaluate(&sol.values) - row.rhs;
        sol.values.scalars[p.0] = g.max(0.0);
        sol.values.scalars[q.0] = (-g).max(0.0);
        total += g.abs();
    }
    total
}

fn design_from(inst: &InstanceData, layout: &Layout, sol: &ConicSolution) -> CovarianceDesign {
    CovarianceDesign {
        w: layout.w.iter().map(|wk| wk.iter().map(|b| sol.values.blocks[b.0].clone()).collect()).collect(),
        r: sol.values.blocks[layout.r.0].clone(),
        eta: layout.eta.map_or(0.0, |e| sol.values.scalars[e.0]),
        sigma_s2: inst.sigma_s2,
    }
}

/// Result of a fixed-trajectory solve.
#[derive(Clone, Debug)]
pub struct FixedOutcome {
    pub status: SolveStatus,
    /// Epigraph objective `Σ (p_i + q_i)` after [`polish_epigraph`]; `+∞`
    /// when infeasible.
    pub objective: f64,
    /// Primal objective reported by the interior point.
    pub solver_objective: f64,
    pub design: Option<CovarianceDesign>,
    /// `λ_2/λ_1` of every `W_k[n]` as returned by the solver, `[k][n]`.
    pub raw_eigen_ratios: Vec<Vec<f64>>,
    /// Same after rank-one recovery.
    pub eigen_ratios: Vec<Vec<f64>>,
    pub stats: SolverStats,
}

impl FixedOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Tolerance below which a covariance counts as zero for rank extraction.
pub const RANK_TOL: f64 = 1e-14;

fn ratios(d: &CovarianceDesign) -> Vec<Vec<f64>> {
    d.w.iter().map(|wk| wk.iter().map(|w| extract_rank_one(w, RANK_TOL).1).collect()).collect()
}

/// Solves the fixed-trajectory problem and applies rank-one recovery when
/// `recover` is set.
pub fn solve_fixed(inst: &InstanceData, trajectory: &Trajectory, recover: bool) -> Result<FixedOutcome, CoreError> {
    let (prob, layout) = build_fixed_trajectory_problem(inst, trajectory)?;
    let mut sol = solve_with_retry(&prob)?;
    if sol.status != SolveStatus::Optimal {
        return Ok(FixedOutcome {
            status: sol.status,
            objective: f64::INFINITY,
            solver_objective: f64::INFINITY,
            design: None,
            raw_eigen_ratios: vec![],
            eigen_ratios: vec![],
            stats: sol.stats,
        });
    }
    let objective = polish_epigraph(&prob, &layout, &mut sol);
    let mut design = design_from(inst, &layout, &sol);
    let raw = ratios(&design);
    if recover {
        tighten_rank_one(&mut design, trajectory, &inst.channels);
    }
    let after = ratios(&design);
    Ok(FixedOutcome {
        status: sol.status,
        objective,
        solver_objective: sol.objective_value,
        design: Some(design),
        raw_eigen_ratios: raw,
        eigen_ratios: after,
        stats: sol.stats,
    })
}

/// Result of a relaxation solve.
#[derive(Clone, Debug)]
pub struct RelaxedOutcome {
    pub status: SolveStatus,
    /// Optimum, `+∞` when the relaxation is infeasible.
    pub objective: f64,
    pub stats: SolverStats,
}

pub fn solve_relaxed(inst: &InstanceData, support: &SupportSet) -> Result<RelaxedOutcome, CoreError> {
    let (prob, layout) = build_relaxed_problem(inst, support)?;
    let mut sol = solve_with_retry(&prob)?;
    let objective = match sol.status {
        SolveStatus::Optimal => polish_epigraph(&prob, &layout, &mut sol),
        SolveStatus::Infeasible => f64::INFINITY,
        _ => f64::NAN,
    };
    Ok(RelaxedOutcome { status: sol.status, objective, stats: sol.stats })
}
