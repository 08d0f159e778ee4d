//! Branch and bound over antenna trajectories.
//!
//! Decision variables are flattened snapshot-major: layer `l = n·M + m`
//! fixes element `m` at snapshot `n`. A node is identified by its prefix of
//! fixed positions; its lower bound comes from the support relaxation, its
//! upper bound from a fixed-trajectory solve of a feasible completion.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::beampattern::CovarianceDesign;
use crate::grid::{candidate_set, spacing_ok_with, Trajectory};
use crate::subproblems::{solve_fixed, solve_relaxed, FixedOutcome, InstanceData, SupportSet};
use crate::CoreError;
use maisac_conic::SolveStatus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BnbSettings {
    /// Absolute optimality gap `Δ`.
    pub tolerance: f64,
    /// Maximum number of nodes created.
    pub node_budget: usize,
    /// Apply rank-one recovery to fixed-trajectory designs.
    pub rank_one_recovery: bool,
}

impl Default for BnbSettings {
    fn default() -> Self {
        Self { tolerance: 1e-4, node_budget: 100_000, rank_one_recovery: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    Open,
    Branched,
    /// Discarded because its lower bound reached the incumbent.
    Pruned,
    /// Violates the spacing constraint or has an infeasible relaxation.
    Infeasible,
    /// Leaf taken from the frontier.
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnbNode {
    pub id: usize,
    pub parent: Option<usize>,
    /// Positions fixed so far in layer order.
    pub prefix: Vec<usize>,
    pub lower_bound: f64,
    /// Objective of the completion evaluated at this node (`+∞` if none).
    pub upper_bound: f64,
    pub status: NodeStatus,
}

impl BnbNode {
    pub fn layer(&self) -> usize {
        self.prefix.len()
    }
}

/// One line of the convergence trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub layer: usize,
    pub global_lb: f64,
    pub global_ub: f64,
    pub external_nodes: usize,
    pub pruned_nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnbStatus {
    /// `UB − LB ≤ Δ`.
    Converged,
    /// The node budget ran out; bounds are still valid.
    BudgetExhausted,
    /// No feasible trajectory exists.
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct BnbResult {
    pub status: BnbStatus,
    pub trajectory: Option<Trajectory>,
    pub design: Option<CovarianceDesign>,
    /// Incumbent objective, `+∞` when none was found.
    pub objective: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Bounds before the first branching step.
    pub initial_lower_bound: f64,
    pub initial_upper_bound: f64,
    pub trace: Vec<TraceRow>,
    pub nodes: Vec<BnbNode>,
    pub fixed_solves: usize,
    pub relaxed_solves: usize,
    pub solver_failures: usize,
    /// Raw `λ_2/λ_1` of every fixed solve, flattened.
    pub raw_eigen_ratios: Vec<f64>,
}

impl BnbResult {
    pub fn gap(&self) -> f64 {
        self.upper_bound - self.lower_bound
    }
}

/// Lexicographically first completion of the prefix's last snapshot that
/// satisfies mobility and spacing, with later snapshots frozen to it. The
/// empty prefix maps to the static trajectory `B[n] = B[0]`.
pub fn complete_prefix(inst: &InstanceData, prefix: &[usize]) -> Option<Trajectory> {
    let m_el = inst.n_elements;
    let n_snap = inst.n_snapshots;
    if prefix.is_empty() {
        return Some(Trajectory::frozen(&inst.initial, n_snap));
    }
    let n = (prefix.len() - 1) / m_el;
    let mut selections: Vec<Vec<usize>> = prefix[..n * m_el].chunks(m_el).map(|c| c.to_vec()).collect();
    let prev: Vec<usize> = if n == 0 { inst.initial.clone() } else { selections[n - 1].clone() };
    let mut current = prefix[n * m_el..].to_vec();
    if !fill_snapshot(inst, &prev, &mut current) {
        return None;
    }
    for _ in n..n_snap {
        selections.push(current.clone());
    }
    Some(Trajectory { initial: inst.initial.clone(), selections })
}

fn fill_snapshot(inst: &InstanceData, prev: &[usize], current: &mut Vec<usize>) -> bool {
    let m = current.len();
    if m == inst.n_elements {
        return true;
    }
    for j in candidate_set(prev[m], &inst.grid, &inst.mobility) {
        if spacing_ok_with(j, current, &inst.grid, &inst.mobility) {
            current.push(j);
            if fill_snapshot(inst, prev, current) {
                return true;
            }
            current.pop();
        }
    }
    false
}

/// Frontier node with the smallest lower bound; ties go to the deepest
/// layer, then to the lowest id.
pub fn select_node(nodes: &[BnbNode], frontier: &[usize]) -> Option<usize> {
    frontier.iter().copied().min_by(|&a, &b| {
        let (na, nb) = (&nodes[a], &nodes[b]);
        na.lower_bound
            .total_cmp(&nb.lower_bound)
            .then(nb.layer().cmp(&na.layer()))
            .then(na.id.cmp(&nb.id))
    })
}

/// Child prefixes of a node, each with its spacing verdict.
pub fn branch(inst: &InstanceData, prefix: &[usize]) -> Vec<(Vec<usize>, bool)> {
    let m_el = inst.n_elements;
    let l = prefix.len();
    let (n, m) = (l / m_el, l % m_el);
    let prev = if n == 0 { inst.initial[m] } else { prefix[(n - 1) * m_el + m] };
    let same_snapshot = &prefix[n * m_el..];
    candidate_set(prev, &inst.grid, &inst.mobility)
        .into_iter()
        .map(|j| {
            let ok = spacing_ok_with(j, same_snapshot, &inst.grid, &inst.mobility);
            let mut child = prefix.to_vec();
            child.push(j);
            (child, ok)
        })
        .collect()
}

struct Engine<'a> {
    inst: &'a InstanceData,
    settings: &'a BnbSettings,
    fixed_cache: HashMap<Vec<Vec<usize>>, FixedOutcome>,
    relaxed_cache: HashMap<Vec<Vec<usize>>, f64>,
    fixed_solves: usize,
    relaxed_solves: usize,
    failures: usize,
    raw_ratios: Vec<f64>,
    best: Option<(f64, Trajectory, CovarianceDesign)>,
}

impl Engine<'_> {
    fn upper(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.0)
    }

    fn fixed(&mut self, t: &Trajectory) -> Result<f64, CoreError> {
        if let Some(out) = self.fixed_cache.get(&t.selections) {
            return Ok(out.objective);
        }
        let out = solve_fixed(self.inst, t, self.settings.rank_one_recovery)?;
        self.fixed_solves += 1;
        if !matches!(out.status, SolveStatus::Optimal | SolveStatus::Infeasible) {
            self.failures += 1;
            log::warn!("fixed solve failed with {:?}", out.status);
        }
        self.raw_ratios.extend(out.raw_eigen_ratios.iter().flatten());
        let obj = out.objective;
        if let Some(d) = &out.design {
            if obj < self.upper() {
                self.best = Some((obj, t.clone(), d.clone()));
            }
        }
        self.fixed_cache.insert(t.selections.clone(), out);
        Ok(obj)
    }

    /// Relaxation value, `+∞` if infeasible, `None` on solver failure.
    fn relaxed(&mut self, prefix: &[usize]) -> Result<Option<f64>, CoreError> {
        let support = SupportSet::for_prefix(self.inst, prefix);
        if let Some(&v) = self.relaxed_cache.get(&support.per_snapshot) {
            return Ok(Some(v));
        }
        let out = solve_relaxed(self.inst, &support)?;
        self.relaxed_solves += 1;
        let v = match out.status {
            SolveStatus::Optimal => out.objective,
            SolveStatus::Infeasible => f64::INFINITY,
            other => {
                self.failures += 1;
                log::warn!("relaxed solve failed with {other:?}");
                return Ok(None);
            }
        };
        self.relaxed_cache.insert(support.per_snapshot, v);
        Ok(Some(v))
    }

    fn node_upper_bound(&mut self, prefix: &[usize]) -> Result<f64, CoreError> {
        match complete_prefix(self.inst, prefix) {
            Some(t) => self.fixed(&t),
            None => Ok(f64::INFINITY),
        }
    }
}

/// Initial `(LB, UB)`: the root relaxation and the static trajectory.
pub fn initial_bounds(inst: &InstanceData, settings: &BnbSettings) -> Result<(f64, f64), CoreError> {
    let mut e = engine(inst, settings);
    let lb = e.relaxed(&[])?.unwrap_or(0.0);
    let ub = e.node_upper_bound(&[])?;
    Ok((lb, ub))
}

fn engine<'a>(inst: &'a InstanceData, settings: &'a BnbSettings) -> Engine<'a> {
    Engine {
        inst,
        settings,
        fixed_cache: HashMap::new(),
        relaxed_cache: HashMap::new(),
        fixed_solves: 0,
        relaxed_solves: 0,
        failures: 0,
        raw_ratios: Vec::new(),
        best: None,
    }
}

/// Global search for the trajectory and covariances minimizing the
/// beampattern mismatch.
pub fn bnb_solve(inst: &InstanceData, settings: &BnbSettings) -> Result<BnbResult, CoreError> {
    if !(settings.tolerance >= 0.0) || settings.node_budget == 0 {
        return Err(CoreError::InvalidParameter("tolerance must be nonnegative and the node budget positive".into()));
    }
    let n_layers = inst.n_snapshots * inst.n_elements;
    let mut e = engine(inst, settings);

    let root_lb = e.relaxed(&[])?.unwrap_or(0.0);
    let root_ub = e.node_upper_bound(&[])?;
    let mut nodes = vec![BnbNode {
        id: 0,
        parent: None,
        prefix: vec![],
        lower_bound: root_lb,
        upper_bound: root_ub,
        status: NodeStatus::Open,
    }];
    let mut frontier: Vec<usize> = Vec::new();
    if root_lb.is_finite() {
        frontier.push(0);
    } else {
        nodes[0].status = NodeStatus::Infeasible;
    }
    let mut pruned = 0usize;
    let mut global_lb = root_lb.min(e.upper());
    let mut trace = vec![TraceRow {
        iter: 0,
        layer: 0,
        global_lb,
        global_ub: e.upper(),
        external_nodes: frontier.len(),
        pruned_nodes: 0,
    }];
    let mut budget_hit = false;
    let mut iter = 0;

    loop {
        let ub = e.upper();
        if frontier.is_empty() || ub - global_lb <= settings.tolerance {
            break;
        }
        if nodes.len() >= settings.node_budget {
            budget_hit = true;
            break;
        }
        iter += 1;
        let sel = select_node(&nodes, &frontier).expect("frontier is nonempty");
        frontier.retain(|&i| i != sel);
        let layer = nodes[sel].layer();
        if layer == n_layers {
            nodes[sel].status = NodeStatus::Closed;
        } else {
            nodes[sel].status = NodeStatus::Branched;
            let parent_lb = nodes[sel].lower_bound;
            let prefix = nodes[sel].prefix.clone();
            for (child, spacing_ok) in branch(inst, &prefix) {
                let id = nodes.len();
                let mut node = BnbNode {
                    id,
                    parent: Some(sel),
                    prefix: child,
                    lower_bound: f64::INFINITY,
                    upper_bound: f64::INFINITY,
                    status: NodeStatus::Infeasible,
                };
                if spacing_ok {
                    let lb = e.relaxed(&node.prefix)?.unwrap_or(parent_lb);
                    node.lower_bound = lb.max(parent_lb);
                    if node.lower_bound.is_finite() {
                        node.upper_bound = e.node_upper_bound(&node.prefix)?;
                        node.status = NodeStatus::Open;
                    }
                }
                nodes.push(node);
                if nodes[id].status == NodeStatus::Open {
                    frontier.push(id);
                }
            }
        }
        // prune against the incumbent
        let ub = e.upper();
        frontier.retain(|&i| {
            if nodes[i].lower_bound >= ub {
                nodes[i].status = NodeStatus::Pruned;
                pruned += 1;
                false
            } else {
                true
            }
        });
        let frontier_min = frontier.iter().map(|&i| nodes[i].lower_bound).fold(f64::INFINITY, f64::min);
        global_lb = if frontier.is_empty() { ub } else { global_lb.max(frontier_min).min(ub) };
        trace.push(TraceRow {
            iter,
            layer,
            global_lb,
            global_ub: ub,
            external_nodes: frontier.len(),
            pruned_nodes: pruned,
        });
    }

    let ub = e.upper();
    let status = if budget_hit {
        BnbStatus::BudgetExhausted
    } else if ub.is_finite() {
        BnbStatus::Converged
    } else {
        BnbStatus::Infeasible
    };
    let (trajectory, design) = match e.best.take() {
        Some((_, t, d)) => (Some(t), Some(d)),
        None => (None, None),
    };
    Ok(BnbResult {
        status,
        trajectory,
        design,
        objective: ub,
        lower_bound: global_lb,
        upper_bound: ub,
        initial_lower_bound: root_lb,
        initial_upper_bound: root_ub,
        trace,
        nodes,
        fixed_solves: e.fixed_solves,
        relaxed_solves: e.relaxed_solves,
        solver_failures: e.failures,
        raw_eigen_ratios: e.raw_ratios,
    })
}
