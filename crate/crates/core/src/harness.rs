//! Experiment runner: configuration, instance generation, the proposed
//! scheme and both baselines, Monte-Carlo sweeps and file output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beampattern::{beampattern_rows, AngularGrid, CovarianceDesign, DesiredBeam};
use crate::bnb::{bnb_solve, BnbSettings, TraceRow};
use crate::channel::{db_to_linear, dbm_to_watts, sample_channel, ChannelParams};
use crate::grid::{build_grid, candidate_set, random_initial, spacing_ok_with, wavelength_mm, MobilityParams, Trajectory};
use crate::oracle::format_trajectory;
use crate::subproblems::{solve_fixed, InstanceData};
use crate::CoreError;

/// Random stream used for the initial positions `B[0]`.
const INITIAL_STREAM: u64 = 1 << 40;
/// Random stream used for the random-movement baseline.
const RANDOM_BASELINE_STREAM: u64 = (1 << 40) + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleSpec {
    /// `n_elevation × n_azimuth` uniform over `[−π/2, π/2]²`.
    Uniform { n_elevation: usize, n_azimuth: usize },
    /// Azimuth cut at the desired elevation.
    AzimuthCut { n_azimuth: usize },
}

impl AngleSpec {
    pub fn build(&self, desired: DesiredBeam) -> Result<AngularGrid, CoreError> {
        match *self {
            AngleSpec::Uniform { n_elevation, n_azimuth } => AngularGrid::uniform(n_elevation, n_azimuth, desired),
            AngleSpec::AzimuthCut { n_azimuth } => AngularGrid::azimuth_cut(n_azimuth, desired),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Number of snapshots `N`.
    Snapshots,
    /// Normalized region size `l`.
    RegionSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    /// Baseline 1: elements stay at `B[0]`.
    Fixed,
    /// Baseline 2: random feasible movement.
    Random,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Proposed, Scheme::Fixed, Scheme::Random];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Fixed => "fixed",
            Scheme::Random => "random",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "proposed" => Ok(Scheme::Proposed),
            "fixed" => Ok(Scheme::Fixed),
            "random" => Ok(Scheme::Random),
            _ => Err(format!("unknown scheme {s}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `M`.
    pub n_elements: usize,
    /// `K`.
    pub n_users: usize,
    /// `N`.
    pub n_snapshots: usize,
    pub carrier_hz: f64,
    /// Normalized region size `l` (side `lλ`).
    pub region_size: f64,
    /// Grid step `d` in mm.
    pub step_mm: f64,
    pub d_min_mm: f64,
    /// `v_MA` in mm/ms.
    pub speed_mm_per_ms: f64,
    /// `T_MA` in ms.
    pub motion_time_ms: f64,
    /// `T_Data` in ms; recorded only.
    pub data_time_ms: f64,
    pub noise_dbm: f64,
    pub sinr_db: f64,
    pub p_max_w: f64,
    pub sigma_s2: f64,
    pub path_loss_exponent: f64,
    pub rician_factor: f64,
    pub distance_range_m: (f64, f64),
    pub elevation_range: (f64, f64),
    pub azimuth_range: (f64, f64),
    pub bnb: BnbSettings,
    pub angles: AngleSpec,
    pub desired: DesiredBeam,
    pub master_seed: u64,
    pub realizations: usize,
    pub sweep_axis: SweepAxis,
    /// Values of the swept parameter; empty means the configured value only.
    pub sweep_values: Vec<f64>,
    /// Realization whose beampattern is exported.
    pub beampattern_realization: usize,
    pub oracle_cap: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let eighth = std::f64::consts::PI / 8.0;
        Self {
            n_elements: 4,
            n_users: 3,
            n_snapshots: 3,
            carrier_hz: 28e9,
            region_size: 4.0,
            step_mm: 2.0,
            d_min_mm: 5.0,
            speed_mm_per_ms: 0.4,
            motion_time_ms: 10.0,
            data_time_ms: 90.0,
            noise_dbm: -80.0,
            sinr_db: 10.0,
            p_max_w: 1.0,
            sigma_s2: 1.0,
            path_loss_exponent: 2.2,
            rician_factor: 4.0,
            distance_range_m: (10.0, 50.0),
            elevation_range: (-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4),
            azimuth_range: (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
            bnb: BnbSettings::default(),
            angles: AngleSpec::Uniform { n_elevation: 9, n_azimuth: 37 },
            desired: DesiredBeam { elevation: 0.0, azimuth: 0.0, psi: eighth, phi: eighth },
            master_seed: 1,
            realizations: 50,
            sweep_axis: SweepAxis::Snapshots,
            sweep_values: vec![1.0, 2.0, 3.0],
            beampattern_realization: 0,
            oracle_cap: crate::oracle::DEFAULT_CAP,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Full-size geometry with every default.
    pub fn full() -> Self {
        Self::default()
    }

    /// Small instance: two elements, one user, a 3 × 3 grid of 2 mm steps.
    pub fn desk() -> Self {
        Self {
            n_elements: 2,
            n_users: 1,
            n_snapshots: 2,
            region_size: 0.4,
            angles: AngleSpec::Uniform { n_elevation: 5, n_azimuth: 19 },
            realizations: 10,
            sweep_values: vec![],
            ..Self::default()
        }
    }

    /// Beampattern recipe: `N = 3`, `ψ = 0`, `φ = π/16`, 181-point azimuth cut.
    pub fn with_beampattern_recipe(mut self) -> Self {
        self.n_snapshots = 3;
        self.desired = DesiredBeam { elevation: 0.0, azimuth: 0.0, psi: 0.0, phi: std::f64::consts::PI / 16.0 };
        self.angles = AngleSpec::AzimuthCut { n_azimuth: 181 };
        self.sweep_values = vec![];
        self
    }

    pub fn from_json(s: &str) -> Result<Self, CoreError> {
        serde_json::from_str(s).map_err(|e| CoreError::InvalidParameter(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let s = fs::read_to_string(path).map_err(|e| CoreError::InvalidInput(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn channel_params(&self) -> ChannelParams {
        ChannelParams {
            carrier_hz: self.carrier_hz,
            path_loss_exponent: self.path_loss_exponent,
            rician_factor: self.rician_factor,
            ref_loss: None,
            distance_range_m: self.distance_range_m,
            elevation_range: self.elevation_range,
            azimuth_range: self.azimuth_range,
            noise_power: dbm_to_watts(self.noise_dbm),
            sinr_target: db_to_linear(self.sinr_db),
        }
    }

    pub fn mobility(&self) -> Result<MobilityParams, CoreError> {
        MobilityParams::new(self.speed_mm_per_ms, self.motion_time_ms, self.d_min_mm)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |s: &str| Err(CoreError::InvalidParameter(s.to_string()));
        if self.n_elements == 0 || self.n_snapshots == 0 {
            return bad("at least one element and one snapshot are required");
        }
        if !(self.region_size > 0.0) || !(self.step_mm > 0.0) {
            return bad("region size and grid step must be positive");
        }
        if self.sweep_values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("sweep values must be positive");
        }
        if self.sweep_axis == SweepAxis::Snapshots && self.sweep_values.iter().any(|v| v.fract() != 0.0) {
            return bad("snapshot sweep values must be integers");
        }
        self.mobility()?;
        self.channel_params().validate()
    }

    /// Seed of realization `r`.
    pub fn seed(&self, r: usize) -> u64 {
        self.master_seed.wrapping_add(r as u64)
    }

    /// Copy with the swept parameter set to `value`.
    pub fn at(&self, value: f64) -> Self {
        let mut c = self.clone();
        match self.sweep_axis {
            SweepAxis::Snapshots => c.n_snapshots = value as usize,
            SweepAxis::RegionSize => c.region_size = value,
        }
        c
    }

    fn sweep_points(&self) -> Vec<f64> {
        if !self.sweep_values.is_empty() {
            return self.sweep_values.clone();
        }
        vec![match self.sweep_axis {
            SweepAxis::Snapshots => self.n_snapshots as f64,
            SweepAxis::RegionSize => self.region_size,
        }]
    }
}

/// Instance of realization `r`: grid, channels and a random spaced `B[0]`.
pub fn build_instance(cfg: &ExperimentConfig, r: usize) -> Result<InstanceData, CoreError> {
    cfg.validate()?;
    let seed = cfg.seed(r);
    let grid = build_grid(cfg.region_size, cfg.step_mm, wavelength_mm(cfg.carrier_hz))?;
    let mobility = cfg.mobility()?;
    let params = cfg.channel_params();
    let channels = (0..cfg.n_users)
        .map(|k| sample_channel(&grid, &params, seed, k))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INITIAL_STREAM);
    let initial = random_initial(&grid, &mobility, cfg.n_elements, &mut rng)?;
    let angles = cfg.angles.build(cfg.desired)?;
    InstanceData::new(grid, mobility, cfg.n_snapshots, initial, channels, angles, cfg.p_max_w, cfg.sigma_s2)
}

/// Outcome of one scheme on one instance.
#[derive(Clone, Debug)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    /// `+∞` when no feasible design was found.
    pub objective: f64,
    pub trajectory: Option<Trajectory>,
    pub design: Option<CovarianceDesign>,
    pub runtime_ms: f64,
    pub nodes: usize,
    pub trace: Vec<TraceRow>,
    /// Raw `λ_2/λ_1` of the fixed solves performed.
    pub raw_eigen_ratios: Vec<f64>,
    pub status: String,
}

impl SchemeOutcome {
    pub fn eta(&self) -> f64 {
        self.design.as_ref().map_or(0.0, |d| d.eta)
    }

    pub fn is_feasible(&self) -> bool {
        self.design.is_some()
    }
}

fn fixed_outcome(scheme: Scheme, inst: &InstanceData, t: Trajectory, recover: bool, start: Instant) -> Result<SchemeOutcome, CoreError> {
    let out = solve_fixed(inst, &t, recover)?;
    Ok(SchemeOutcome {
        scheme,
        objective: out.objective,
        status: format!("{:?}", out.status),
        trajectory: out.design.is_some().then_some(t),
        design: out.design,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        nodes: 0,
        trace: vec![],
        raw_eigen_ratios: out.raw_eigen_ratios.into_iter().flatten().collect(),
    })
}

/// Baseline 1: the fixed-trajectory optimum with `B[n] = B[0]`.
pub fn baseline_fixed(inst: &InstanceData, recover: bool) -> Result<SchemeOutcome, CoreError> {
    let start = Instant::now();
    fixed_outcome(Scheme::Fixed, inst, Trajectory::frozen(&inst.initial, inst.n_snapshots), recover, start)
}

/// Random trajectory satisfying mobility and spacing, drawn by rejection
/// element by element; a snapshot that cannot be completed is redrawn.
pub fn random_trajectory(inst: &InstanceData, seed: u64) -> Result<Trajectory, CoreError> {
    const ELEMENT_TRIES: usize = 64;
    const SNAPSHOT_TRIES: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RANDOM_BASELINE_STREAM);
    let mut selections: Vec<Vec<usize>> = Vec::with_capacity(inst.n_snapshots);
    let mut prev = inst.initial.clone();
    for _ in 0..inst.n_snapshots {
        let mut placed = None;
        'snapshot: for _ in 0..SNAPSHOT_TRIES {
            let mut cur: Vec<usize> = Vec::with_capacity(inst.n_elements);
            for &p in &prev {
                let cands = candidate_set(p, &inst.grid, &inst.mobility);
                let pick = (0..ELEMENT_TRIES)
                    .filter_map(|_| cands.choose(&mut rng).copied())
                    .find(|&j| spacing_ok_with(j, &cur, &inst.grid, &inst.mobility));
                match pick {
                    Some(j) => cur.push(j),
                    None => continue 'snapshot,
                }
            }
            placed = Some(cur);
            break;
        }
        let cur = placed.ok_or_else(|| CoreError::InvalidInput("random movement could not satisfy the spacing constraint".into()))?;
        prev = cur.clone();
        selections.push(cur);
    }
    Ok(Trajectory { initial: inst.initial.clone(), selections })
}

/// Baseline 2: random feasible movement, then the fixed-trajectory optimum.
pub fn baseline_random(inst: &InstanceData, seed: u64, recover: bool) -> Result<SchemeOutcome, CoreError> {
    let start = Instant::now();
    let t = random_trajectory(inst, seed)?;
    fixed_outcome(Scheme::Random, inst, t, recover, start)
}

/// The proposed scheme: global search over trajectories.
pub fn proposed(inst: &InstanceData, settings: &BnbSettings) -> Result<SchemeOutcome, CoreError> {
    let start = Instant::now();
    let res = bnb_solve(inst, settings)?;
    Ok(SchemeOutcome {
        scheme: Scheme::Proposed,
        objective: res.objective,
        status: format!("{:?}", res.status),
        trajectory: res.trajectory,
        design: res.design,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        nodes: res.nodes.len(),
        trace: res.trace,
        raw_eigen_ratios: res.raw_eigen_ratios,
    })
}

pub fn run_scheme(scheme: Scheme, inst: &InstanceData, cfg: &ExperimentConfig, seed: u64) -> Result<SchemeOutcome, CoreError> {
    let recover = cfg.bnb.rank_one_recovery;
    match scheme {
        Scheme::Proposed => proposed(inst, &cfg.bnb),
        Scheme::Fixed => baseline_fixed(inst, recover),
        Scheme::Random => baseline_random(inst, seed, recover),
    }
}

/// Per-realization CSV record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub sweep_value: f64,
    pub realization: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub status: String,
    pub objective: f64,
    pub eta: f64,
    /// `C / η`.
    pub normalized_mismatch: f64,
    pub runtime_ms: f64,
    pub nodes: usize,
    pub trajectory: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub mean_normalized_mismatch: f64,
    pub realizations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRow {
    pub sweep_value: f64,
    pub realization: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sweep_value: f64,
    pub realization: usize,
    pub iter: usize,
    pub layer: usize,
    pub global_lb: f64,
    pub global_ub: f64,
    pub external_nodes: usize,
    pub pruned_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeampatternRecord {
    pub scheme: Scheme,
    pub alpha_rad: f64,
    pub beta_rad: f64,
    pub ideal: f64,
    pub gain: f64,
    pub normalized_gain: f64,
}

/// Everything an experiment produces.
#[derive(Clone, Debug, Default)]
pub struct ReportBundle {
    pub records: Vec<RealizationRecord>,
    /// Means over realizations that are feasible for every scheme at every
    /// sweep value and have `η ≥ 1e−9`.
    pub aggregates: Vec<AggregateRow>,
    pub exclusions: Vec<ExclusionRow>,
    pub traces: Vec<TraceRecord>,
    pub beampattern: Vec<BeampatternRecord>,
    /// Every requested solve returned without error.
    pub complete: bool,
    /// Raw `λ_2/λ_1` of every fixed solve performed.
    pub raw_eigen_ratios: Vec<f64>,
}

/// Realizations with `η` below this are excluded from normalized means.
pub const ETA_FLOOR: f64 = 1e-9;

/// Maps `f` over `0..n` on all available cores, keeping index order.
fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                s.spawn(move || (w..n).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("worker panicked") {
                out[i] = Some(v);
            }
        }
    });
    out.into_iter().map(|v| v.expect("every index computed")).collect()
}

type RealizationResult = Result<Vec<SchemeOutcome>, String>;

/// Runs every scheme on every realization at every sweep value.
pub fn run_experiment(cfg: &ExperimentConfig, schemes: &[Scheme]) -> Result<ReportBundle, CoreError> {
    cfg.validate()?;
    let mut bundle = ReportBundle { complete: true, ..Default::default() };
    let points = cfg.sweep_points();
    // results[point][realization]
    let mut results: Vec<Vec<RealizationResult>> = Vec::with_capacity(points.len());
    for &v in &points {
        let c = cfg.at(v);
        results.push(parallel_map(cfg.realizations, |r| {
            let inst = build_instance(&c, r).map_err(|e| e.to_string())?;
            schemes
                .iter()
                .map(|&s| run_scheme(s, &inst, &c, c.seed(r)).map_err(|e| e.to_string()))
                .collect()
        }));
    }

    let mut usable = vec![true; cfg.realizations];
    for (pi, &v) in points.iter().enumerate() {
        for r in 0..cfg.realizations {
            match &results[pi][r] {
                Err(e) => {
                    bundle.complete = false;
                    usable[r] = false;
                    bundle.exclusions.push(ExclusionRow { sweep_value: v, realization: r, reason: e.clone() });
                }
                Ok(outs) => {
                    for o in outs {
                        bundle.raw_eigen_ratios.extend(&o.raw_eigen_ratios);
                        let eta = o.eta();
                        bundle.records.push(RealizationRecord {
                            sweep_value: v,
                            realization: r,
                            seed: cfg.seed(r),
                            scheme: o.scheme,
                            status: o.status.clone(),
                            objective: o.objective,
                            eta,
                            normalized_mismatch: if o.is_feasible() { o.objective / eta } else { f64::INFINITY },
                            runtime_ms: o.runtime_ms,
                            nodes: o.nodes,
                            trajectory: o.trajectory.as_ref().map(format_trajectory).unwrap_or_default(),
                        });
                        for t in &o.trace {
                            bundle.traces.push(TraceRecord {
                                sweep_value: v,
                                realization: r,
                                iter: t.iter,
                                layer: t.layer,
                                global_lb: t.global_lb,
                                global_ub: t.global_ub,
                                external_nodes: t.external_nodes,
                                pruned_nodes: t.pruned_nodes,
                            });
                        }
                        if usable[r] && !o.is_feasible() {
                            usable[r] = false;
                            bundle.exclusions.push(ExclusionRow {
                                sweep_value: v,
                                realization: r,
                                reason: format!("{} infeasible ({})", o.scheme.name(), o.status),
                            });
                        } else if usable[r] && eta < ETA_FLOOR {
                            usable[r] = false;
                            bundle.exclusions.push(ExclusionRow {
                                sweep_value: v,
                                realization: r,
                                reason: format!("{} has eta below {ETA_FLOOR:e}", o.scheme.name()),
                            });
                        }
                    }
                }
            }
        }
    }

    for (pi, &v) in points.iter().enumerate() {
        for (si, &s) in schemes.iter().enumerate() {
            let vals: Vec<f64> = (0..cfg.realizations)
                .filter(|&r| usable[r])
                .filter_map(|r| results[pi][r].as_ref().ok().map(|o| o[si].objective / o[si].eta()))
                .collect();
            let mean = if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 };
            bundle.aggregates.push(AggregateRow { sweep_value: v, scheme: s, mean_normalized_mismatch: mean, realizations: vals.len() });
        }
    }

    let r = cfg.beampattern_realization;
    if r < cfg.realizations {
        let pi = points.len() - 1;
        if let Ok(outs) = &results[pi][r] {
            let inst = build_instance(&cfg.at(points[pi]), r)?;
            for o in outs {
                if let (Some(d), Some(t)) = (&o.design, &o.trajectory) {
                    for row in beampattern_rows(d, t, &inst.grid, &inst.angles)? {
                        bundle.beampattern.push(BeampatternRecord {
                            scheme: o.scheme,
                            alpha_rad: row.alpha_rad,
                            beta_rad: row.beta_rad,
                            ideal: row.ideal,
                            gain: row.gain,
                            normalized_gain: row.normalized_gain,
                        });
                    }
                }
            }
        }
    }
    Ok(bundle)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CoreError {
    CoreError::InvalidInput(format!("{}: {e}", path.display()))
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<(), CoreError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub package: String,
    pub version: String,
    pub schemes: Vec<Scheme>,
    pub complete: bool,
    pub records: usize,
    pub exclusions: usize,
}

/// Writes the bundle as CSV files plus `manifest.json` into `dir`.
pub fn write_bundle(bundle: &ReportBundle, cfg: &ExperimentConfig, schemes: &[Scheme], dir: &Path) -> Result<(), CoreError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_csv(&bundle.records, &dir.join("records.csv"))?;
    write_csv(&bundle.aggregates, &dir.join("aggregates.csv"))?;
    write_csv(&bundle.exclusions, &dir.join("exclusions.csv"))?;
    write_csv(&bundle.traces, &dir.join("traces.csv"))?;
    write_csv(&bundle.beampattern, &dir.join("beampattern.csv"))?;
    let manifest = Manifest {
        config: cfg.clone(),
        config_sha256: cfg.hash(),
        package: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        schemes: schemes.to_vec(),
        complete: bundle.complete,
        records: bundle.records.len(),
        exclusions: bundle.exclusions.len(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}
