//! Ideal pattern, beam gain, mismatch and SINR evaluation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{restrict_steering, virtual_steering, AngleOfDeparture, EffectiveChannel};
use crate::grid::{PositionGrid, Trajectory};
use crate::CoreError;

/// Tolerance on the closed in-region boundary.
const BOUNDARY_EPS: f64 = 1e-12;

/// Gains down to this value are treated as round-off and clamped to 0.
pub const NEGATIVE_GAIN_TOL: f64 = 1e-9;

/// Desired beam: center `(α_des, β_des)` and widths `(ψ, φ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesiredBeam {
    pub elevation: f64,
    pub azimuth: f64,
    pub psi: f64,
    pub phi: f64,
}

impl DesiredBeam {
    /// `|α − α_des| ≤ ψ/2` and `|β − β_des| ≤ φ/2` (closed).
    pub fn contains(&self, aod: AngleOfDeparture) -> bool {
        (aod.elevation - self.elevation).abs() <= self.psi / 2.0 + BOUNDARY_EPS
            && (aod.azimuth - self.azimuth).abs() <= self.phi / 2.0 + BOUNDARY_EPS
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularGrid {
    pub points: Vec<AngleOfDeparture>,
    pub desired: DesiredBeam,
    in_region: Vec<bool>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl AngularGrid {
    pub fn new(points: Vec<AngleOfDeparture>, desired: DesiredBeam) -> Result<Self, CoreError> {
        if points.is_empty() {
            return Err(CoreError::InvalidParameter("angular grid needs at least one point".into()));
        }
        if !(desired.psi >= 0.0 && desired.phi >= 0.0) {
            return Err(CoreError::InvalidParameter("beam widths must be nonnegative".into()));
        }
        let in_region = points.iter().map(|&p| desired.contains(p)).collect();
        Ok(Self { points, desired, in_region })
    }

    /// `n_elevation × n_azimuth` points, both axes uniform over `[−π/2, π/2]`.
    /// A single elevation sample sits at the desired elevation.
    pub fn uniform(n_elevation: usize, n_azimuth: usize, desired: DesiredBeam) -> Result<Self, CoreError> {
        let h = std::f64::consts::FRAC_PI_2;
        let elev = if n_elevation == 1 { vec![desired.elevation] } else { linspace(-h, h, n_elevation) };
        let azim = linspace(-h, h, n_azimuth);
        let mut points = Vec::with_capacity(elev.len() * azim.len());
        for &a in &elev {
            for &b in &azim {
                points.push(AngleOfDeparture::new(a, b));
            }
        }
        Self::new(points, desired)
    }

    /// Azimuth cut at the desired elevation.
    pub fn azimuth_cut(n_azimuth: usize, desired: DesiredBeam) -> Result<Self, CoreError> {
        Self::uniform(1, n_azimuth, desired)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn in_region(&self) -> &[bool] {
        &self.in_region
    }
}

/// The binary ideal pattern `P̃_i`.
pub fn ideal_pattern(angles: &AngularGrid) -> Vec<f64> {
    angles.in_region.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Communication covariances `W_k[n]`, joint radar covariance `R` and
/// pattern scale `η`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDesign {
    /// `w[k][n]`, each `M × M`.
    pub w: Vec<Vec<DMatrix<Complex64>>>,
    /// `NM × NM`, snapshot-major.
    pub r: DMatrix<Complex64>,
    pub eta: f64,
    pub sigma_s2: f64,
}

/// `Re vᴴ X v`.
pub fn quad(x: &DMatrix<Complex64>, v: &[Complex64]) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..v.len() {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..v.len() {
            row += x[(i, j)] * v[j];
        }
        acc += v[i].conj() * row;
    }
    acc.re
}

fn sub_block(x: &DMatrix<Complex64>, start: usize, len: usize) -> DMatrix<Complex64> {
    x.view((start, start), (len, len)).into_owned()
}

impl CovarianceDesign {
    pub fn zeros(k: usize, n: usize, m: usize, sigma_s2: f64) -> Self {
        Self {
            w: vec![vec![DMatrix::zeros(m, m); n]; k],
            r: DMatrix::zeros(n * m, n * m),
            eta: 0.0,
            sigma_s2,
        }
    }

    pub fn n_users(&self) -> usize {
        self.w.len()
    }

    /// Checks that the design has `n` snapshots of `m` elements.
    pub fn check_shape(&self, n: usize, m: usize) -> Result<(), CoreError> {
        let bad = |s: String| Err(CoreError::InvalidInput(s));
        if self.r.nrows() != n * m || self.r.ncols() != n * m {
            return bad(format!("R is {}x{}, expected {}", self.r.nrows(), self.r.ncols(), n * m));
        }
        for (k, wk) in self.w.iter().enumerate() {
            if wk.len() != n {
                return bad(format!("user {k} has {} snapshots, expected {n}", wk.len()));
            }
            for w in wk {
                if w.nrows() != m || w.ncols() != m {
                    return bad(format!("W for user {k} is {}x{}, expected {m}", w.nrows(), w.ncols()));
                }
            }
        }
        Ok(())
    }

    /// Diagonal block `R[n]` of snapshot `n`.
    pub fn r_block(&self, n: usize, m: usize) -> DMatrix<Complex64> {
        sub_block(&self.r, n * m, m)
    }

    /// `σ_s² Σ Tr W_k[n] + Tr R`.
    pub fn power(&self) -> f64 {
        let w: f64 = self.w.iter().flatten().map(|w| w.trace().re).sum();
        self.sigma_s2 * w + self.r.trace().re
    }

    /// Largest Hermitian defect and smallest eigenvalue over all blocks.
    pub fn numerics(&self) -> (f64, f64) {
        let mut herm: f64 = 0.0;
        let mut min_eig = f64::INFINITY;
        for x in self.w.iter().flatten().chain(std::iter::once(&self.r)) {
            if x.nrows() == 0 {
                continue;
            }
            herm = herm.max((x - x.adjoint()).camax());
            let h = (x + x.adjoint()) * Complex64::new(0.5, 0.0);
            min_eig = min_eig.min(nalgebra::SymmetricEigen::new(h).eigenvalues.min());
        }
        (herm, min_eig)
    }
}

fn clamp_gain(g: f64) -> Result<f64, CoreError> {
    if g >= 0.0 {
        Ok(g)
    } else if g >= -NEGATIVE_GAIN_TOL {
        Ok(0.0)
    } else {
        Err(CoreError::Internal(format!("beam gain {g} is negative beyond round-off")))
    }
}

/// Beam gain from per-snapshot steering vectors (each of length `M`).
pub fn gain_from_steering(design: &CovarianceDesign, per_snapshot: &[Vec<Complex64>]) -> Result<f64, CoreError> {
    let n = per_snapshot.len();
    let m = per_snapshot.first().map_or(0, |a| a.len());
    design.check_shape(n, m)?;
    let mut g = 0.0;
    for wk in &design.w {
        for (w, a) in wk.iter().zip(per_snapshot) {
            g += design.sigma_s2 * quad(w, a);
        }
    }
    let stacked: Vec<Complex64> = per_snapshot.iter().flatten().copied().collect();
    g += quad(&design.r, &stacked);
    clamp_gain(g)
}

/// `P(α, β) = σ_s² Σ_{n,k} a_t[n]ᴴ W_k[n] a_t[n] + a_Tᴴ R a_T`.
pub fn beam_gain(
    design: &CovarianceDesign,
    trajectory: &Trajectory,
    grid: &PositionGrid,
    aod: AngleOfDeparture,
) -> Result<f64, CoreError> {
    let a = virtual_steering(grid, aod);
    let per: Vec<Vec<Complex64>> = (0..trajectory.n_snapshots())
        .map(|n| restrict_steering(&a, trajectory, n))
        .collect();
    gain_from_steering(design, &per)
}

/// Beam gain at every point of the angular grid.
pub fn beampattern(
    design: &CovarianceDesign,
    trajectory: &Trajectory,
    grid: &PositionGrid,
    angles: &AngularGrid,
) -> Result<Vec<f64>, CoreError> {
    angles
        .points
        .iter()
        .map(|&p| beam_gain(design, trajectory, grid, p))
        .collect()
}

/// `Σ_i |η P̃_i − P_i|`.
pub fn mismatch(
    design: &CovarianceDesign,
    trajectory: &Trajectory,
    grid: &PositionGrid,
    angles: &AngularGrid,
) -> Result<f64, CoreError> {
    let gains = beampattern(design, trajectory, grid, angles)?;
    Ok(ideal_pattern(angles)
        .iter()
        .zip(&gains)
        .map(|(t, g)| (design.eta * t - g).abs())
        .sum())
}

/// SINR of `channel`'s user in snapshot `n` (0-based).
pub fn sinr(
    design: &CovarianceDesign,
    trajectory: &Trajectory,
    channel: &EffectiveChannel,
    n: usize,
) -> Result<f64, CoreError> {
    let m = trajectory.n_elements();
    design.check_shape(trajectory.n_snapshots(), m)?;
    let k = channel.user_id;
    if k >= design.n_users() {
        return Err(CoreError::InvalidInput(format!("user {k} has no covariance")));
    }
    let h = channel.restricted(&trajectory.selections[n]);
    let signal = quad(&design.w[k][n], &h);
    let mut interference = quad(&design.r_block(n, m), &h);
    for (kk, wk) in design.w.iter().enumerate() {
        if kk != k {
            interference += quad(&wk[n], &h);
        }
    }
    Ok((signal / (interference + channel.noise_power)).max(0.0))
}

/// `Tr(Bᵀ W̄_k B Ĥ_k) − γ_k σ_k²` with
/// `W̄_k = W_k − γ_k (Σ_{k'≠k} W_{k'} + R[n])`; nonnegative iff the SINR
/// target holds.
pub fn sinr_slack(
    design: &CovarianceDesign,
    trajectory: &Trajectory,
    channel: &EffectiveChannel,
    n: usize,
) -> Result<f64, CoreError> {
    let m = trajectory.n_elements();
    design.check_shape(trajectory.n_snapshots(), m)?;
    let k = channel.user_id;
    let g = channel.sinr_target;
    let mut wbar = design.w[k][n].clone() - design.r_block(n, m) * Complex64::new(g, 0.0);
    for (kk, wk) in design.w.iter().enumerate() {
        if kk != k {
            wbar -= &wk[n] * Complex64::new(g, 0.0);
        }
    }
    let h = channel.restricted(&trajectory.selections[n]);
    Ok(quad(&wbar, &h) - g * channel.noise_power)
}

/// One row of a beampattern export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeampatternRow {
    pub alpha_rad: f64,
    pub beta_rad: f64,
    pub ideal: f64,
    pub gain: f64,
    pub normalized_gain: f64,
}

pub fn beampattern_rows(
    design: &CovarianceDesign,
    trajectory: &Trajectory,
    grid: &PositionGrid,
    angles: &AngularGrid,
) -> Result<Vec<BeampatternRow>, CoreError> {
    let gains = beampattern(design, trajectory, grid, angles)?;
    let ideal = ideal_pattern(angles);
    Ok(angles
        .points
        .iter()
        .zip(gains.iter().zip(&ideal))
        .map(|(p, (&g, &t))| BeampatternRow {
            alpha_rad: p.elevation,
            beta_rad: p.azimuth,
            ideal: t,
            gain: g,
            normalized_gain: if design.eta > 0.0 { g / design.eta } else { f64::NAN },
        })
        .collect())
}
