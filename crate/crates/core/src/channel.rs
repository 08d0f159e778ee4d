//! Steering vectors over the candidate positions and Rician user channels.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::grid::{PositionGrid, Trajectory};
use crate::CoreError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleOfDeparture {
    /// Elevation `α` in radians.
    pub elevation: f64,
    /// Azimuth `β` in radians.
    pub azimuth: f64,
}

impl AngleOfDeparture {
    pub fn new(elevation: f64, azimuth: f64) -> Self {
        Self { elevation, azimuth }
    }
}

/// Phase `ρ(α, β, p)` of a position relative to the reference `p_1`.
pub fn phase(grid: &PositionGrid, aod: AngleOfDeparture, j: usize) -> f64 {
    let (x, y) = grid.position_mm(j);
    let (x1, y1) = grid.position_mm(0);
    let k = 2.0 * PI / grid.wavelength_mm();
    k * ((x - x1) * aod.elevation.cos() * aod.azimuth.sin() + (y - y1) * aod.elevation.sin())
}

/// `a_j = exp(i ρ(α, β, p_j))` for every grid position.
pub fn virtual_steering(grid: &PositionGrid, aod: AngleOfDeparture) -> Vec<Complex64> {
    let k = 2.0 * PI / grid.wavelength_mm();
    let ux = aod.elevation.cos() * aod.azimuth.sin();
    let uy = aod.elevation.sin();
    (0..grid.len())
        .map(|j| {
            let (x, y) = grid.position_mm(j);
            Complex64::from_polar(1.0, k * (x * ux + y * uy))
        })
        .collect()
}

/// Entries of `a` at the given indices, in element order.
pub fn select(a: &[Complex64], indices: &[usize]) -> Vec<Complex64> {
    indices.iter().map(|&j| a[j]).collect()
}

/// Per-snapshot steering vector `a_t(α, β, t[n])` (snapshot `n` is 0-based).
pub fn restrict_steering(a: &[Complex64], trajectory: &Trajectory, n: usize) -> Vec<Complex64> {
    select(a, &trajectory.selections[n])
}

/// Large-scale and small-scale channel parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub carrier_hz: f64,
    pub path_loss_exponent: f64,
    /// Rician factor `β`; `f64::INFINITY` gives a pure line-of-sight channel.
    pub rician_factor: f64,
    /// Reference loss at 1 m; `None` uses free space `(λ / 4π)²`.
    pub ref_loss: Option<f64>,
    pub distance_range_m: (f64, f64),
    pub elevation_range: (f64, f64),
    pub azimuth_range: (f64, f64),
    /// Noise power `σ_k²` in watts.
    pub noise_power: f64,
    /// Linear SINR target `γ_k`.
    pub sinr_target: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_hz: 28e9,
            path_loss_exponent: 2.2,
            rician_factor: 4.0,
            ref_loss: None,
            distance_range_m: (10.0, 50.0),
            elevation_range: (-PI / 4.0, PI / 4.0),
            azimuth_range: (-PI / 2.0, PI / 2.0),
            noise_power: dbm_to_watts(-80.0),
            sinr_target: db_to_linear(10.0),
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |m: &str| Err(CoreError::InvalidParameter(m.to_string()));
        if !(self.carrier_hz > 0.0) {
            return bad("carrier frequency must be positive");
        }
        if !(self.path_loss_exponent > 0.0) {
            return bad("path-loss exponent must be positive");
        }
        if !(self.rician_factor >= 0.0) {
            return bad("Rician factor must be nonnegative");
        }
        let (d0, d1) = self.distance_range_m;
        if !(d0 > 0.0 && d1 >= d0 && d1.is_finite()) {
            return bad("distance range must satisfy 0 < min <= max");
        }
        for (lo, hi) in [self.elevation_range, self.azimuth_range] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return bad("angle ranges must be finite with min <= max");
            }
        }
        if !(self.noise_power > 0.0) || !(self.sinr_target > 0.0) {
            return bad("noise power and SINR target must be positive");
        }
        if let Some(l0) = self.ref_loss {
            if !(l0 > 0.0) {
                return bad("reference loss must be positive");
            }
        }
        Ok(())
    }

    /// `L_0`: configured value or free-space loss at 1 m.
    pub fn reference_loss(&self) -> f64 {
        self.ref_loss.unwrap_or_else(|| {
            let lambda_m = crate::grid::SPEED_OF_LIGHT / self.carrier_hz;
            (lambda_m / (4.0 * PI)).powi(2)
        })
    }
}

/// Channel of one user over all `J` positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveChannel {
    pub user_id: usize,
    pub h_hat: Vec<Complex64>,
    pub noise_power: f64,
    pub sinr_target: f64,
    pub distance_m: f64,
    pub los_aod: AngleOfDeparture,
}

impl EffectiveChannel {
    /// Channel entries at the given positions.
    pub fn restricted(&self, indices: &[usize]) -> Vec<Complex64> {
        select(&self.h_hat, indices)
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// `ĥ = √(L_0 D^{-α}) (√(β/(1+β)) h_L + √(1/(1+β)) h_N)`.
///
/// Deterministic in `(seed, user_id)`: the generator is seeded with `seed`
/// and uses `user_id` as its stream.
pub fn sample_channel(
    grid: &PositionGrid,
    params: &ChannelParams,
    seed: u64,
    user_id: usize,
) -> Result<EffectiveChannel, CoreError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user_id as u64);
    let distance = uniform(&mut rng, params.distance_range_m);
    let aod = AngleOfDeparture::new(
        uniform(&mut rng, params.elevation_range),
        uniform(&mut rng, params.azimuth_range),
    );
    let large = (params.reference_loss() * distance.powf(-params.path_loss_exponent)).sqrt();
    let beta = params.rician_factor;
    let (w_los, w_nlos) = if beta.is_infinite() {
        (1.0, 0.0)
    } else {
        ((beta / (1.0 + beta)).sqrt(), (1.0 / (1.0 + beta)).sqrt())
    };
    let los = virtual_steering(grid, aod);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h_hat = los
        .iter()
        .map(|&a| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            (a * w_los + Complex64::new(re * s, im * s) * w_nlos) * large
        })
        .collect();
    Ok(EffectiveChannel {
        user_id,
        h_hat,
        noise_power: params.noise_power,
        sinr_target: params.sinr_target,
        distance_m: distance,
        los_aod: aod,
    })
}
