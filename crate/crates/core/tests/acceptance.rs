//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use maisac_core::beampattern::CovarianceDesign;
use maisac_core::bnb::{bnb_solve, BnbResult, BnbStatus};
use maisac_core::grid::{wavelength_mm, Trajectory};
use maisac_core::harness::{baseline_fixed, baseline_random, build_instance, AngleSpec, ExperimentConfig, SchemeOutcome};
use maisac_core::oracle::{brute_force_solve, enumerate_trajectories, DEFAULT_CAP};
use maisac_core::subproblems::{solve_fixed, solve_relaxed, InstanceData, SupportSet};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

const ORACLE_INSTANCES: usize = 10;
const DESK_REALIZATIONS: usize = 20;
const TREND_REALIZATIONS: usize = 24;
const TIME_LIMIT_S: f64 = 300.0;
const DELTA: f64 = 1e-4;
/// Realization shown in the beampattern check.
const BEAMPATTERN_REALIZATION: usize = 0;

// ---------- independent re-evaluation ----------

fn position(inst: &InstanceData, j: usize) -> (f64, f64) {
    let per = inst.grid.per_axis();
    let d = inst.grid.step_mm();
    ((j % per) as f64 * d, (j / per) as f64 * d)
}

fn steer(inst: &InstanceData, idx: &[usize], alpha: f64, beta: f64) -> Vec<Complex64> {
    let k = 2.0 * PI / inst.grid.wavelength_mm();
    idx.iter()
        .map(|&j| {
            let (x, y) = position(inst, j);
            Complex64::from_polar(1.0, k * (x * alpha.cos() * beta.sin() + y * alpha.sin()))
        })
        .collect()
}

fn herm_form(x: &DMatrix<Complex64>, v: &[Complex64]) -> f64 {
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..v.len() {
        for j in 0..v.len() {
            s += v[i].conj() * x[(i, j)] * v[j];
        }
    }
    s.re
}

fn block(x: &DMatrix<Complex64>, n: usize, m: usize) -> DMatrix<Complex64> {
    x.view((n * m, n * m), (m, m)).into_owned()
}

fn gain(inst: &InstanceData, t: &Trajectory, d: &CovarianceDesign, alpha: f64, beta: f64) -> f64 {
    let per: Vec<Vec<Complex64>> = t.selections.iter().map(|s| steer(inst, s, alpha, beta)).collect();
    let mut g = 0.0;
    for wk in &d.w {
        for (w, a) in wk.iter().zip(&per) {
            g += d.sigma_s2 * herm_form(w, a);
        }
    }
    let stacked: Vec<Complex64> = per.concat();
    g + herm_form(&d.r, &stacked)
}

fn in_beam(inst: &InstanceData, alpha: f64, beta: f64) -> bool {
    let b = inst.angles.desired;
    (alpha - b.elevation).abs() <= b.psi / 2.0 + 1e-12 && (beta - b.azimuth).abs() <= b.phi / 2.0 + 1e-12
}

fn recomputed_mismatch(inst: &InstanceData, t: &Trajectory, d: &CovarianceDesign) -> f64 {
    inst.angles
        .points
        .iter()
        .map(|p| {
            let target = if in_beam(inst, p.elevation, p.azimuth) { d.eta } else { 0.0 };
            (target - gain(inst, t, d, p.elevation, p.azimuth)).abs()
        })
        .sum()
}

fn check_psd(x: &DMatrix<Complex64>, what: &str) -> Result<(), String> {
    if x.nrows() == 0 {
        return Ok(());
    }
    let scale = x.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let herm = (x - x.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
    if herm > 1e-9 * scale {
        return Err(format!("{what} not Hermitian ({herm:.2e})"));
    }
    let h = (x + x.adjoint()) * Complex64::new(0.5, 0.0);
    let min = SymmetricEigen::new(h).eigenvalues.min();
    if min < -1e-9 * scale {
        return Err(format!("{what} has eigenvalue {min:.2e}"));
    }
    Ok(())
}

fn check_trajectory(inst: &InstanceData, t: &Trajectory) -> Result<(), String> {
    let d_max = inst.mobility.d_max_mm;
    let d_min = inst.mobility.d_min_mm;
    if t.initial != inst.initial || t.selections.len() != inst.n_snapshots {
        return Err("trajectory shape".into());
    }
    let mut prev = &inst.initial;
    for (n, s) in t.selections.iter().enumerate() {
        if s.len() != inst.n_elements || s.iter().any(|&j| j >= inst.grid.len()) {
            return Err(format!("snapshot {n} selection invalid"));
        }
        for (a, b) in prev.iter().zip(s) {
            let (pa, pb) = (position(inst, *a), position(inst, *b));
            if (pa.0 - pb.0).abs().max((pa.1 - pb.1).abs()) > d_max + 1e-9 {
                return Err(format!("snapshot {n} moves beyond D_max"));
            }
        }
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                let (pa, pb) = (position(inst, s[i]), position(inst, s[j]));
                if ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt() < d_min - 1e-9 {
                    return Err(format!("snapshot {n} violates D_min"));
                }
            }
        }
        prev = s;
    }
    Ok(())
}

/// Full re-verification of a returned design against its claimed objective.
fn verify(inst: &InstanceData, t: &Trajectory, d: &CovarianceDesign, claimed: f64) -> Result<(), String> {
    check_trajectory(inst, t)?;
    let m = inst.n_elements;
    for (k, wk) in d.w.iter().enumerate() {
        for (n, w) in wk.iter().enumerate() {
            check_psd(w, &format!("W[{k}][{n}]"))?;
        }
    }
    check_psd(&d.r, "R")?;
    let mut power = d.r.trace().re;
    for w in d.w.iter().flatten() {
        power += d.sigma_s2 * w.trace().re;
    }
    if power > inst.p_max * (1.0 + 1e-7) {
        return Err(format!("power {power} exceeds {}", inst.p_max));
    }
    for ch in &inst.channels {
        let k = ch.user_id;
        for n in 0..inst.n_snapshots {
            let h: Vec<Complex64> = t.selections[n].iter().map(|&j| ch.h_hat[j]).collect();
            let signal = herm_form(&d.w[k][n], &h);
            let mut interf = herm_form(&block(&d.r, n, m), &h) + ch.noise_power;
            for (kk, wk) in d.w.iter().enumerate() {
                if kk != k {
                    interf += herm_form(&wk[n], &h);
                }
            }
            let s = signal / interf;
            if s < ch.sinr_target * (1.0 - 1e-6) {
                return Err(format!("user {k} snapshot {n} SINR {s} below {}", ch.sinr_target));
            }
        }
    }
    let c = recomputed_mismatch(inst, t, d);
    if (c - claimed).abs() > 1e-6 {
        return Err(format!("claimed mismatch {claimed} vs recomputed {c}"));
    }
    Ok(())
}

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        f64::NAN
    } else {
        v[v.len() / 2]
    }
}

// ---------- desk fixture ----------

struct DeskRun {
    seed: u64,
    inst: InstanceData,
    bnb: BnbResult,
    bnb_seconds: f64,
    fixed: SchemeOutcome,
    random: SchemeOutcome,
}

fn desk_runs() -> Vec<DeskRun> {
    let cfg = ExperimentConfig::desk();
    (0..DESK_REALIZATIONS)
        .map(|r| {
            let inst = build_instance(&cfg, r).expect("desk instance");
            let t0 = Instant::now();
            let bnb = bnb_solve(&inst, &cfg.bnb).expect("bnb");
            let bnb_seconds = t0.elapsed().as_secs_f64();
            let fixed = baseline_fixed(&inst, true).expect("baseline 1");
            let random = baseline_random(&inst, cfg.seed(r), true).expect("baseline 2");
            DeskRun { seed: cfg.seed(r), inst, bnb, bnb_seconds, fixed, random }
        })
        .collect()
}

// ---------- larger geometry for the trend and beampattern ----------

/// 3 × 3 grid with 4 mm steps: one hop per slot, diagonal pairs allowed.
fn trend_config() -> ExperimentConfig {
    ExperimentConfig {
        n_elements: 2,
        n_users: 1,
        region_size: 8.0 / wavelength_mm(28e9),
        step_mm: 4.0,
        angles: AngleSpec::Uniform { n_elevation: 5, n_azimuth: 9 },
        realizations: TREND_REALIZATIONS,
        sweep_values: vec![1.0, 2.0, 3.0],
        ..ExperimentConfig::default()
    }
}

// ---------- criteria ----------

fn c1_oracle(runs: &[DeskRun], oracle: &[f64]) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    let mut bad = vec![];
    for (run, &o) in runs.iter().zip(oracle) {
        let b = run.bnb.objective;
        let rel = if o.is_infinite() && b.is_infinite() { 0.0 } else { (b - o).abs() / o.abs().max(1e-12) };
        worst = worst.max(rel);
        slowest = slowest.max(run.bnb_seconds);
        if !(rel <= 1e-3) || run.bnb_seconds >= TIME_LIMIT_S {
            bad.push(format!("seed {} bnb {b} oracle {o}", run.seed));
        }
    }
    Verdict::new(
        bad.is_empty() && oracle.len() == ORACLE_INSTANCES,
        format!("{} instances, worst relative gap {worst:.2e}, slowest {slowest:.1} s {bad:?}", oracle.len()),
    )
}

fn bound_discipline(res: &BnbResult) -> Result<(), String> {
    for w in res.trace.windows(2) {
        if w[1].global_lb < w[0].global_lb {
            return Err(format!("LB decreased at iter {}", w[1].iter));
        }
        if w[1].global_ub > w[0].global_ub {
            return Err(format!("UB increased at iter {}", w[1].iter));
        }
    }
    if let Some(r) = res.trace.iter().find(|r| r.global_lb > r.global_ub) {
        return Err(format!("LB above UB at iter {}", r.iter));
    }
    if res.status != BnbStatus::Infeasible && !(res.upper_bound - res.lower_bound <= DELTA) {
        return Err(format!("final gap {}", res.upper_bound - res.lower_bound));
    }
    if res.status == BnbStatus::BudgetExhausted {
        return Err("node budget exhausted".into());
    }
    Ok(())
}

fn c2_bounds(all: &[&BnbResult]) -> Verdict {
    let errs: Vec<String> = all.iter().filter_map(|r| bound_discipline(r).err()).collect();
    let rows: usize = all.iter().map(|r| r.trace.len()).sum();
    Verdict::new(errs.is_empty(), format!("{} runs, {rows} trace rows {errs:?}", all.len()))
}

fn c3_dominance(runs: &[DeskRun]) -> Verdict {
    let mut bad = vec![];
    let mut strict = 0;
    for r in runs {
        let p = r.bnb.objective;
        let b1 = r.fixed.objective;
        let b2 = r.random.objective;
        if !(p <= b1 + 1e-6 && p <= b2 + 1e-6) {
            bad.push(format!("seed {}: {p} vs {b1}, {b2}", r.seed));
        }
        if p < b1.min(b2) - 1e-6 {
            strict += 1;
        }
    }
    Verdict::new(
        bad.is_empty() && runs.len() >= 20,
        format!("{} realizations, strictly better on {strict} {bad:?}", runs.len()),
    )
}

struct TrendPoint {
    proposed: f64,
    baseline: f64,
}

fn c4_trend(designs: &mut Vec<(InstanceData, Trajectory, CovarianceDesign, f64)>, bnbs: &mut Vec<BnbResult>) -> Verdict {
    let cfg = trend_config();
    // per realization: (proposed C/η, baseline C/η) for N = 1, 2, 3
    let mut rows: Vec<Option<Vec<(f64, f64)>>> = Vec::new();
    let mut excluded = 0;
    for r in 0..cfg.realizations {
        let mut row = Vec::new();
        for &n in &cfg.sweep_values {
            let c = cfg.at(n);
            let inst = build_instance(&c, r).expect("trend instance");
            let res = bnb_solve(&inst, &c.bnb).expect("bnb");
            let base = baseline_fixed(&inst, true).expect("baseline 1");
            let ok = res.design.as_ref().is_some_and(|d| d.eta >= 1e-9) && base.design.as_ref().is_some_and(|d| d.eta >= 1e-9);
            if ok {
                row.push((res.objective / res.design.as_ref().unwrap().eta, base.objective / base.eta()));
                designs.push((inst.clone(), res.trajectory.clone().unwrap(), res.design.clone().unwrap(), res.objective));
                designs.push((inst.clone(), base.trajectory.clone().unwrap(), base.design.clone().unwrap(), base.objective));
            }
            bnbs.push(res);
            if !ok {
                break;
            }
        }
        if row.len() == cfg.sweep_values.len() {
            rows.push(Some(row));
        } else {
            excluded += 1;
            rows.push(None);
        }
    }
    let used: Vec<&Vec<(f64, f64)>> = rows.iter().flatten().collect();
    let points: Vec<TrendPoint> = (0..cfg.sweep_values.len())
        .map(|i| TrendPoint {
            proposed: used.iter().map(|r| r[i].0).sum::<f64>() / used.len() as f64,
            baseline: used.iter().map(|r| r[i].1).sum::<f64>() / used.len() as f64,
        })
        .collect();
    let decreasing = points.windows(2).all(|w| w[1].proposed < w[0].proposed);
    let gap = |p: &TrendPoint| p.baseline - p.proposed;
    let widens = gap(points.last().unwrap()) > gap(&points[0]);
    let detail = format!(
        "{} realizations used, {excluded} excluded; proposed {:?}; baseline {:?}; gap N=1 {:.4} N=3 {:.4}",
        used.len(),
        points.iter().map(|p| format!("{:.4}", p.proposed)).collect::<Vec<_>>(),
        points.iter().map(|p| format!("{:.4}", p.baseline)).collect::<Vec<_>>(),
        gap(&points[0]),
        gap(points.last().unwrap()),
    );
    Verdict::new(used.len() >= 20 && decreasing && widens, detail)
}

/// Half-power width around the global maximum of a cut, linearly interpolated.
fn half_power_width(beta: &[f64], g: &[f64]) -> f64 {
    let (imax, &peak) = g.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let half = peak / 2.0;
    let cross = |i: usize, j: usize| beta[i] + (half - g[i]) / (g[j] - g[i]) * (beta[j] - beta[i]);
    let mut lo = beta[0];
    for i in (0..imax).rev() {
        if g[i] < half {
            lo = cross(i, i + 1);
            break;
        }
    }
    let mut hi = *beta.last().unwrap();
    for i in imax + 1..g.len() {
        if g[i] < half {
            hi = cross(i - 1, i);
            break;
        }
    }
    hi - lo
}

fn c5_shape(designs: &mut Vec<(InstanceData, Trajectory, CovarianceDesign, f64)>, bnbs: &mut Vec<BnbResult>) -> Verdict {
    let cfg = ExperimentConfig { realizations: 1, ..trend_config() }.with_beampattern_recipe();
    let inst = build_instance(&cfg, BEAMPATTERN_REALIZATION).expect("instance");
    let res = bnb_solve(&inst, &cfg.bnb).expect("bnb");
    let base = baseline_fixed(&inst, true).expect("baseline 1");
    let (Some(pd), Some(pt), Some(bd), Some(bt)) = (&res.design, &res.trajectory, &base.design, &base.trajectory) else {
        return Verdict::new(false, "designated realization infeasible".into());
    };
    let beta: Vec<f64> = inst.angles.points.iter().map(|p| p.azimuth).collect();
    let cut = |t: &Trajectory, d: &CovarianceDesign| -> Vec<f64> {
        inst.angles.points.iter().map(|p| gain(&inst, t, d, p.elevation, p.azimuth) / d.eta).collect()
    };
    let gp = cut(pt, pd);
    let gb = cut(bt, bd);
    let inside: Vec<bool> = inst.angles.points.iter().map(|p| in_beam(&inst, p.elevation, p.azimuth)).collect();
    let peak_in = gp.iter().zip(&inside).filter(|x| *x.1).map(|x| *x.0).fold(f64::NEG_INFINITY, f64::max);
    let peak_out = gp.iter().zip(&inside).filter(|x| !*x.1).map(|x| *x.0).fold(f64::NEG_INFINITY, f64::max);
    let imax = gp.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let w_p = half_power_width(&beta, &gp);
    let w_b = half_power_width(&beta, &gb);
    let pass = inside[imax] && peak_out < peak_in && w_b >= w_p;
    designs.push((inst.clone(), pt.clone(), pd.clone(), res.objective));
    designs.push((inst.clone(), bt.clone(), bd.clone(), base.objective));
    bnbs.push(res);
    Verdict::new(
        pass,
        format!(
            "seed {}: max at beta {:.4} (inside {}), in-region peak {peak_in:.4}, sidelobe {peak_out:.4}, half-power width proposed {w_p:.4} baseline {w_b:.4}",
            cfg.seed(BEAMPATTERN_REALIZATION),
            beta[imax],
            inside[imax]
        ),
    )
}

fn c6_validity(designs: &[(InstanceData, Trajectory, CovarianceDesign, f64)]) -> Verdict {
    let errs: Vec<String> = designs
        .iter()
        .enumerate()
        .filter_map(|(i, (inst, t, d, c))| verify(inst, t, d, *c).err().map(|e| format!("#{i}: {e}")))
        .collect();
    Verdict::new(errs.is_empty() && !designs.is_empty(), format!("{} designs re-verified {errs:?}", designs.len()))
}

fn c7_relaxation(runs: &[DeskRun], oracle: &[f64]) -> Verdict {
    let mut bad = vec![];
    let mut leaves = 0;
    let mut worst_leaf: f64 = 0.0;
    for (run, &o) in runs.iter().zip(oracle) {
        let (lb, ub) = (run.bnb.initial_lower_bound, run.bnb.initial_upper_bound);
        if !(lb <= o + 1e-6 * o.abs().max(1.0) && o <= ub) {
            bad.push(format!("seed {}: {lb} / {o} / {ub}", run.seed));
        }
        let all = enumerate_trajectories(&run.inst, DEFAULT_CAP).expect("enumerate");
        for t in all.iter().step_by(3) {
            let prefix: Vec<usize> = t.selections.concat();
            let relaxed = solve_relaxed(&run.inst, &SupportSet::for_prefix(&run.inst, &prefix)).expect("relaxed");
            let fixed = solve_fixed(&run.inst, t, false).expect("fixed");
            leaves += 1;
            if relaxed.objective.is_infinite() && fixed.objective.is_infinite() {
                continue;
            }
            let diff = (relaxed.objective - fixed.objective).abs();
            worst_leaf = worst_leaf.max(diff);
            if !(diff <= 1e-6) {
                bad.push(format!("seed {} leaf {prefix:?}: {} vs {}", run.seed, relaxed.objective, fixed.objective));
            }
        }
    }
    Verdict::new(
        bad.is_empty(),
        format!("{} instances, {leaves} leaves, worst leaf difference {worst_leaf:.2e} {bad:?}", oracle.len()),
    )
}

fn c8_rank_one(runs: &[DeskRun]) -> Verdict {
    let mut raw = vec![];
    let mut recovered = vec![];
    let mut exceptions = vec![];
    for run in runs.iter().take(6) {
        for t in enumerate_trajectories(&run.inst, DEFAULT_CAP).expect("enumerate") {
            let out = solve_fixed(&run.inst, &t, true).expect("fixed");
            if !out.is_optimal() {
                continue;
            }
            for (k, per) in out.raw_eigen_ratios.iter().enumerate() {
                for (n, &r) in per.iter().enumerate() {
                    raw.push(r);
                    if r >= 1e-6 {
                        exceptions.push(format!(
                            "seed {} k {k} n {n} ratio {r:.2e} trajectory {:?} initial {:?} channel {:?}",
                            run.seed, t.selections, run.inst.initial, run.inst.channels[k].h_hat
                        ));
                    }
                }
            }
            recovered.extend(out.eigen_ratios.iter().flatten());
        }
    }
    let solves = raw.len();
    let med = median(&mut raw);
    let med_rec = median(&mut recovered);
    for e in &exceptions {
        println!("  rank-one exception: {e}");
    }
    Verdict::new(
        solves >= 50 && med < 1e-6,
        format!("{solves} blocks, median raw ratio {med:.2e}, after recovery {med_rec:.2e}, {} exceptions", exceptions.len()),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let runs = desk_runs();
    let oracle: Vec<f64> = runs
        .iter()
        .take(ORACLE_INSTANCES)
        .map(|r| {
            let o = brute_force_solve(&r.inst, DEFAULT_CAP, true).expect("oracle");
            assert!(!o.tainted, "oracle solve without verdict on seed {}", r.seed);
            o.objective
        })
        .collect();

    let mut designs = vec![];
    for r in &runs {
        for (t, d, c) in [
            (&r.bnb.trajectory, &r.bnb.design, r.bnb.objective),
            (&r.fixed.trajectory, &r.fixed.design, r.fixed.objective),
            (&r.random.trajectory, &r.random.design, r.random.objective),
        ] {
            if let (Some(t), Some(d)) = (t, d) {
                designs.push((r.inst.clone(), t.clone(), d.clone(), c));
            }
        }
    }
    let mut extra_bnb = vec![];

    let mut verdicts: Vec<(usize, &str, Verdict)> = vec![];
    verdicts.push((1, "oracle equivalence", c1_oracle(&runs, &oracle)));
    verdicts.push((3, "dominance", c3_dominance(&runs)));
    verdicts.push((4, "trend in N", c4_trend(&mut designs, &mut extra_bnb)));
    verdicts.push((5, "beampattern shape", c5_shape(&mut designs, &mut extra_bnb)));
    let all_bnb: Vec<&BnbResult> = runs.iter().map(|r| &r.bnb).chain(extra_bnb.iter()).collect();
    verdicts.push((2, "bound discipline", c2_bounds(&all_bnb)));
    verdicts.push((6, "solution validity", c6_validity(&designs)));
    verdicts.push((7, "relaxation sanity", c7_relaxation(&runs[..ORACLE_INSTANCES], &oracle)));
    verdicts.push((8, "rank-one tightness", c8_rank_one(&runs)));
    verdicts.sort_by_key(|v| v.0);

    let mut failed = 0;
    for (i, name, v) in &verdicts {
        println!("{} criterion {i} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed in {:.0} s", verdicts.len() - failed, start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
