//! Exhaustive reference solver for small instances.

use std::path::Path;

use maisac_conic::SolveStatus;
use serde::{Deserialize, Serialize};

use crate::beampattern::CovarianceDesign;
use crate::grid::{min_distance_feasible, mobility_feasible, Trajectory};
use crate::subproblems::{solve_fixed, InstanceData};
use crate::CoreError;

/// Default limit on the number of enumerated trajectories.
pub const DEFAULT_CAP: usize = 10_000;

/// Every spaced configuration reachable from `prev` in one slot.
pub fn snapshot_configs(inst: &InstanceData, prev: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(prev.len());
    configs_rec(inst, prev, &mut cur, &mut out);
    out
}

fn configs_rec(inst: &InstanceData, prev: &[usize], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let m = cur.len();
    if m == prev.len() {
        out.push(cur.clone());
        return;
    }
    for j in 0..inst.grid.len() {
        if !mobility_feasible(prev[m], j, &inst.grid, &inst.mobility) {
            continue;
        }
        cur.push(j);
        if min_distance_feasible(cur, &inst.grid, &inst.mobility) {
            configs_rec(inst, prev, cur, out);
        }
        cur.pop();
    }
}

/// All feasible trajectories in lexicographic order. Fails once more than
/// `cap` have been found.
pub fn enumerate_trajectories(inst: &InstanceData, cap: usize) -> Result<Vec<Trajectory>, CoreError> {
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(inst.n_snapshots);
    enumerate_rec(inst, &inst.initial, &mut path, &mut out, cap)?;
    Ok(out)
}

fn enumerate_rec(
    inst: &InstanceData,
    prev: &[usize],
    path: &mut Vec<Vec<usize>>,
    out: &mut Vec<Trajectory>,
    cap: usize,
) -> Result<(), CoreError> {
    if path.len() == inst.n_snapshots {
        if out.len() >= cap {
            return Err(CoreError::InvalidInput(format!(
                "more than {cap} feasible trajectories; instance too large for enumeration"
            )));
        }
        out.push(Trajectory { initial: inst.initial.clone(), selections: path.clone() });
        return Ok(());
    }
    for cfg in snapshot_configs(inst, prev) {
        path.push(cfg);
        let last = path.last().unwrap().clone();
        enumerate_rec(inst, &last, path, out, cap)?;
        path.pop();
    }
    Ok(())
}

/// One enumerated trajectory and its fixed-trajectory optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub id: usize,
    /// Snapshots separated by `|`, 1-based positions separated by spaces.
    pub trajectory: String,
    pub objective: f64,
    pub status: String,
}

pub fn format_trajectory(t: &Trajectory) -> String {
    t.selections
        .iter()
        .map(|s| s.iter().map(|j| (j + 1).to_string()).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("|")
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub trajectory: Option<Trajectory>,
    pub design: Option<CovarianceDesign>,
    /// `+∞` when no trajectory admits a feasible design.
    pub objective: f64,
    pub audit: Vec<AuditRow>,
    /// Some solve ended without a verdict, so the minimum may be wrong.
    pub tainted: bool,
}

/// Solves the fixed-trajectory problem for every feasible trajectory.
pub fn brute_force_solve(inst: &InstanceData, cap: usize, recover: bool) -> Result<OracleResult, CoreError> {
    let all = enumerate_trajectories(inst, cap)?;
    let mut best: Option<(f64, Trajectory, CovarianceDesign)> = None;
    let mut audit = Vec::with_capacity(all.len());
    let mut tainted = false;
    for (id, t) in all.into_iter().enumerate() {
        let out = solve_fixed(inst, &t, recover)?;
        if !matches!(out.status, SolveStatus::Optimal | SolveStatus::Infeasible) {
            tainted = true;
        }
        audit.push(AuditRow {
            id,
            trajectory: format_trajectory(&t),
            objective: out.objective,
            status: format!("{:?}", out.status),
        });
        if let Some(d) = out.design {
            if best.as_ref().is_none_or(|b| out.objective < b.0) {
                best = Some((out.objective, t, d));
            }
        }
    }
    Ok(match best {
        Some((obj, t, d)) => OracleResult { trajectory: Some(t), design: Some(d), objective: obj, audit, tainted },
        None => OracleResult { trajectory: None, design: None, objective: f64::INFINITY, audit, tainted },
    })
}

pub fn write_audit_csv(rows: &[AuditRow], path: &Path) -> Result<(), CoreError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CoreError::InvalidInput(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| CoreError::InvalidInput(e.to_string()))?;
    }
    w.flush().map_err(|e| CoreError::InvalidInput(e.to_string()))?;
    Ok(())
}
