//! Discrete transmit region, position selections and the mobility and
//! spacing predicates.
//!
//! Positions live on an integer lattice: index `j` maps to lattice
//! coordinates `(j % per_axis, j / per_axis)` (row-major, `y` major) and to
//! millimetres by multiplying with the step `d`. Index 0 is the reference
//! position `p_1 = (0, 0)`. Internally indices are 0-based; the JSON forms
//! use 1-based indices.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::CoreError;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Slack used when turning real-valued ratios into lattice counts.
const LATTICE_EPS: f64 = 1e-9;

/// Wavelength in millimetres for a carrier frequency in Hz.
pub fn wavelength_mm(carrier_hz: f64) -> f64 {
    SPEED_OF_LIGHT / carrier_hz * 1e3
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct GridSpec {
    step_mm: f64,
    side_mm: f64,
    wavelength_mm: f64,
}

/// The `J` candidate positions on a step-`d` lattice covering `[0, lλ]²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct PositionGrid {
    step_mm: f64,
    side_mm: f64,
    wavelength_mm: f64,
    per_axis: usize,
}

impl TryFrom<GridSpec> for PositionGrid {
    type Error = CoreError;
    fn try_from(s: GridSpec) -> Result<Self, CoreError> {
        PositionGrid::with_side(s.side_mm, s.step_mm, s.wavelength_mm)
    }
}

impl From<PositionGrid> for GridSpec {
    fn from(g: PositionGrid) -> Self {
        GridSpec { step_mm: g.step_mm, side_mm: g.side_mm, wavelength_mm: g.wavelength_mm }
    }
}

/// Builds the lattice for a region of side `l·λ` with spacing `d`.
pub fn build_grid(l: f64, d_mm: f64, wavelength_mm: f64) -> Result<PositionGrid, CoreError> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(CoreError::InvalidParameter(format!("region size l must be positive, got {l}")));
    }
    if !(wavelength_mm > 0.0 && wavelength_mm.is_finite()) {
        return Err(CoreError::InvalidParameter(format!("wavelength must be positive, got {wavelength_mm}")));
    }
    PositionGrid::with_side(l * wavelength_mm, d_mm, wavelength_mm)
}

impl PositionGrid {
    pub fn with_side(side_mm: f64, step_mm: f64, wavelength_mm: f64) -> Result<Self, CoreError> {
        for (name, v) in [("side", side_mm), ("step", step_mm), ("wavelength", wavelength_mm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CoreError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if step_mm > side_mm * (1.0 + LATTICE_EPS) {
            return Err(CoreError::InvalidParameter(format!(
                "step {step_mm} mm exceeds region side {side_mm} mm"
            )));
        }
        let per_axis = (side_mm / step_mm + LATTICE_EPS).floor() as usize + 1;
        Ok(Self { step_mm, side_mm, wavelength_mm, per_axis })
    }

    pub fn step_mm(&self) -> f64 {
        self.step_mm
    }

    pub fn side_mm(&self) -> f64 {
        self.side_mm
    }

    pub fn wavelength_mm(&self) -> f64 {
        self.wavelength_mm
    }

    /// Lattice points per axis.
    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    /// Number of positions `J`.
    pub fn len(&self) -> usize {
        self.per_axis * self.per_axis
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Integer lattice coordinates of position `j`.
    pub fn lattice(&self, j: usize) -> (i64, i64) {
        ((j % self.per_axis) as i64, (j / self.per_axis) as i64)
    }

    pub fn index(&self, ix: i64, iy: i64) -> Option<usize> {
        let n = self.per_axis as i64;
        if (0..n).contains(&ix) && (0..n).contains(&iy) {
            Some((iy * n + ix) as usize)
        } else {
            None
        }
    }

    /// Coordinates of position `j` in millimetres.
    pub fn position_mm(&self, j: usize) -> (f64, f64) {
        let (ix, iy) = self.lattice(j);
        (ix as f64 * self.step_mm, iy as f64 * self.step_mm)
    }

    pub fn positions_mm(&self) -> Vec<(f64, f64)> {
        (0..self.len()).map(|j| self.position_mm(j)).collect()
    }
}

/// Movement and spacing limits of the antenna elements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityParams {
    pub d_max_mm: f64,
    pub d_min_mm: f64,
    pub speed_mm_per_ms: f64,
    pub motion_time_ms: f64,
}

impl MobilityParams {
    pub fn new(speed_mm_per_ms: f64, motion_time_ms: f64, d_min_mm: f64) -> Result<Self, CoreError> {
        let p = Self {
            d_max_mm: speed_mm_per_ms * motion_time_ms,
            d_min_mm,
            speed_mm_per_ms,
            motion_time_ms,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters with a given displacement limit over a unit motion time.
    pub fn from_limits(d_max_mm: f64, d_min_mm: f64) -> Result<Self, CoreError> {
        Self::new(d_max_mm, 1.0, d_min_mm)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.speed_mm_per_ms) && ok(self.d_min_mm) && self.motion_time_ms > 0.0 && ok(self.motion_time_ms)) {
            return Err(CoreError::InvalidParameter(format!("invalid mobility parameters {self:?}")));
        }
        if (self.d_max_mm - self.speed_mm_per_ms * self.motion_time_ms).abs() > 1e-9 * (1.0 + self.d_max_mm) {
            return Err(CoreError::InvalidParameter("d_max must equal speed * motion time".into()));
        }
        Ok(())
    }

    /// Largest per-axis displacement in lattice steps.
    pub fn max_hops(&self, grid: &PositionGrid) -> i64 {
        (self.d_max_mm / grid.step_mm + LATTICE_EPS).floor() as i64
    }

    /// Smallest admissible squared lattice distance between two elements.
    pub fn min_sq_lattice_distance(&self, grid: &PositionGrid) -> i64 {
        let r = self.d_min_mm / grid.step_mm;
        (r * r - LATTICE_EPS).ceil().max(0.0) as i64
    }
}

/// `‖p_next − p_prev‖_∞ ≤ D_max`.
pub fn mobility_feasible(j_prev: usize, j_next: usize, grid: &PositionGrid, params: &MobilityParams) -> bool {
    let (ax, ay) = grid.lattice(j_prev);
    let (bx, by) = grid.lattice(j_next);
    (ax - bx).abs().max((ay - by).abs()) <= params.max_hops(grid)
}

fn pair_ok(a: usize, b: usize, grid: &PositionGrid, min_sq: i64) -> bool {
    let (ax, ay) = grid.lattice(a);
    let (bx, by) = grid.lattice(b);
    let (dx, dy) = (ax - bx, ay - by);
    dx * dx + dy * dy >= min_sq && a != b
}

/// Every pair of elements is at least `D_min` apart.
pub fn min_distance_feasible(indices: &[usize], grid: &PositionGrid, params: &MobilityParams) -> bool {
    let min_sq = params.min_sq_lattice_distance(grid);
    for (i, &a) in indices.iter().enumerate() {
        for &b in &indices[i + 1..] {
            if !pair_ok(a, b, grid, min_sq) {
                return false;
            }
        }
    }
    true
}

/// Whether `j` keeps `D_min` from every index in `others`.
pub fn spacing_ok_with(j: usize, others: &[usize], grid: &PositionGrid, params: &MobilityParams) -> bool {
    let min_sq = params.min_sq_lattice_distance(grid);
    others.iter().all(|&o| pair_ok(j, o, grid, min_sq))
}

/// Positions within one snapshot's reach of `j_prev`, in ascending order.
pub fn candidate_set(j_prev: usize, grid: &PositionGrid, params: &MobilityParams) -> Vec<usize> {
    reachable_set(j_prev, 1, grid, params)
}

/// Positions within `hops · D_max` (Chebyshev) of `j_start`, ascending.
pub fn reachable_set(j_start: usize, hops: usize, grid: &PositionGrid, params: &MobilityParams) -> Vec<usize> {
    let r = params.max_hops(grid).saturating_mul(hops as i64);
    let (cx, cy) = grid.lattice(j_start);
    let n = grid.per_axis() as i64;
    let (x0, x1) = ((cx - r).max(0), (cx + r).min(n - 1));
    let (y0, y1) = ((cy - r).max(0), (cy + r).min(n - 1));
    let mut out = Vec::with_capacity(((x1 - x0 + 1) * (y1 - y0 + 1)) as usize);
    for iy in y0..=y1 {
        for ix in x0..=x1 {
            out.push((iy * n + ix) as usize);
        }
    }
    out
}

/// Per-snapshot position indices of every element plus the initial
/// configuration `B[0]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Trajectory {
    pub initial: Vec<usize>,
    /// `selections[n][m]`: position of element `m` in snapshot `n` (0-based).
    pub selections: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryJson {
    initial: Vec<usize>,
    selections: Vec<Vec<usize>>,
}

impl Serialize for Trajectory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TrajectoryJson {
            initial: self.initial.iter().map(|j| j + 1).collect(),
            selections: self.selections.iter().map(|r| r.iter().map(|j| j + 1).collect()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let t = TrajectoryJson::deserialize(d)?;
        let dec = |j: usize| {
            j.checked_sub(1)
                .ok_or_else(|| serde::de::Error::custom("trajectory indices are 1-based"))
        };
        Ok(Trajectory {
            initial: t.initial.into_iter().map(dec).collect::<Result<_, _>>()?,
            selections: t
                .selections
                .into_iter()
                .map(|r| r.into_iter().map(dec).collect::<Result<_, _>>())
                .collect::<Result<_, _>>()?,
        })
    }
}

/// Which constraint a trajectory breaks first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrajectoryViolation {
    Shape(String),
    IndexOutOfRange { snapshot: usize, element: usize },
    Mobility { snapshot: usize, element: usize },
    Spacing { snapshot: usize },
}

impl Trajectory {
    /// All snapshots hold the initial configuration.
    pub fn frozen(initial: &[usize], n_snapshots: usize) -> Self {
        Trajectory { initial: initial.to_vec(), selections: vec![initial.to_vec(); n_snapshots] }
    }

    pub fn n_snapshots(&self) -> usize {
        self.selections.len()
    }

    pub fn n_elements(&self) -> usize {
        self.initial.len()
    }

    /// Configuration before snapshot `n` (0-based), i.e. `B[n]` in 1-based terms.
    pub fn previous(&self, n: usize) -> &[usize] {
        if n == 0 {
            &self.initial
        } else {
            &self.selections[n - 1]
        }
    }

    /// Checks one-hot shape, index range, mobility between consecutive
    /// snapshots (including from `B[0]`) and spacing in every snapshot.
    pub fn check(&self, grid: &PositionGrid, params: &MobilityParams) -> Result<(), TrajectoryViolation> {
        let m = self.initial.len();
        if m == 0 {
            return Err(TrajectoryViolation::Shape("no elements".into()));
        }
        for (n, row) in self.selections.iter().enumerate() {
            if row.len() != m {
                return Err(TrajectoryViolation::Shape(format!("snapshot {n} has {} entries, expected {m}", row.len())));
            }
        }
        for (e, &j) in self.initial.iter().enumerate() {
            if j >= grid.len() {
                return Err(TrajectoryViolation::IndexOutOfRange { snapshot: 0, element: e });
            }
        }
        if !min_distance_feasible(&self.initial, grid, params) {
            return Err(TrajectoryViolation::Spacing { snapshot: 0 });
        }
        for n in 0..self.selections.len() {
            let prev = self.previous(n);
            for (e, &j) in self.selections[n].iter().enumerate() {
                if j >= grid.len() {
                    return Err(TrajectoryViolation::IndexOutOfRange { snapshot: n + 1, element: e });
                }
                if !mobility_feasible(prev[e], j, grid, params) {
                    return Err(TrajectoryViolation::Mobility { snapshot: n + 1, element: e });
                }
            }
            if !min_distance_feasible(&self.selections[n], grid, params) {
                return Err(TrajectoryViolation::Spacing { snapshot: n + 1 });
            }
        }
        Ok(())
    }

    pub fn is_feasible(&self, grid: &PositionGrid, params: &MobilityParams) -> bool {
        self.check(grid, params).is_ok()
    }
}

/// Draws `m` positions one by one, each uniformly among the positions that
/// keep `D_min` from the ones already drawn; restarts on dead ends.
pub fn random_initial<R: Rng + ?Sized>(
    grid: &PositionGrid,
    params: &MobilityParams,
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>, CoreError> {
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        for _ in 0..m {
            let options: Vec<usize> = (0..grid.len())
                .filter(|&j| spacing_ok_with(j, &chosen, grid, params))
                .collect();
            match options.choose(rng) {
                Some(&j) => chosen.push(j),
                None => break,
            }
        }
        if chosen.len() == m {
            return Ok(chosen);
        }
    }
    Err(CoreError::InvalidParameter(format!(
        "could not place {m} elements with spacing {} mm on the grid",
        params.d_min_mm
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn paper_grid() -> PositionGrid {
        build_grid(4.0, 2.0, wavelength_mm(28e9)).unwrap()
    }

    fn paper_mobility() -> MobilityParams {
        MobilityParams::new(0.4, 10.0, 5.0).unwrap()
    }

    #[test]
    fn paper_grid_has_484_positions() {
        // independent count: floor(4 λ / 2) + 1 points per axis
        let lambda: f64 = 299_792_458.0 / 28e9 * 1000.0;
        let per_axis = (4.0 * lambda / 2.0).floor() as usize + 1;
        assert_eq!(per_axis, 22);
        let g = paper_grid();
        assert_eq!(g.len(), per_axis * per_axis);
        assert_eq!(g.len(), 484);
        assert!((g.wavelength_mm() - 10.706873).abs() < 1e-5);
    }

    #[test]
    fn one_wavelength_step_gives_corners() {
        let lambda = wavelength_mm(28e9);
        assert_eq!(build_grid(1.0, lambda, lambda).unwrap().len(), 4);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let lambda = wavelength_mm(28e9);
        assert!(build_grid(1.0, 1.5 * lambda, lambda).is_err());
        assert!(build_grid(0.0, 1.0, lambda).is_err());
        assert!(build_grid(1.0, -1.0, lambda).is_err());
    }

    #[test]
    fn neighbours_differ_by_one_step() {
        let g = paper_grid();
        let (x0, y0) = g.position_mm(0);
        let (x1, y1) = g.position_mm(1);
        let (x2, y2) = g.position_mm(g.per_axis());
        assert_eq!((x0, y0), (0.0, 0.0));
        assert_eq!((x1 - x0, y1 - y0), (2.0, 0.0));
        assert_eq!((x2 - x0, y2 - y0), (0.0, 2.0));
        for (x, y) in g.positions_mm() {
            assert!(x <= g.side_mm() && y <= g.side_mm());
        }
    }

    #[test]
    fn mobility_uses_chebyshev_norm() {
        let g = paper_grid();
        let p = paper_mobility();
        let at = |x: i64, y: i64| g.index(x, y).unwrap();
        let c = at(5, 5);
        assert!(mobility_feasible(c, c, &g, &p));
        assert!(mobility_feasible(c, at(7, 7), &g, &p)); // (4,4) mm
        assert!(!mobility_feasible(c, at(8, 5), &g, &p)); // (6,0) mm
        assert!(mobility_feasible(c, at(7, 6), &g, &p)); // (4,2) mm
        // the Euclidean length of (4,2) is above D_max, the Chebyshev one is not
        assert!((4.0f64.hypot(2.0)) > p.d_max_mm);
    }

    #[test]
    fn spacing_examples() {
        let g = paper_grid();
        let p = paper_mobility();
        let at = |x: i64, y: i64| g.index(x, y).unwrap();
        assert!(!min_distance_feasible(&[at(3, 3), at(3, 3)], &g, &p));
        assert!(!min_distance_feasible(&[at(3, 3), at(4, 3)], &g, &p));
        assert!(min_distance_feasible(&[at(3, 3), at(5, 5)], &g, &p));
        assert!(min_distance_feasible(&[at(3, 3)], &g, &p));
        // independent Euclidean evaluation of the two offsets
        assert!(2.0 < p.d_min_mm && 32f64.sqrt() >= p.d_min_mm);
    }

    fn brute_ball(g: &PositionGrid, j: usize, radius_mm: f64) -> Vec<usize> {
        let (x, y) = g.position_mm(j);
        (0..g.len())
            .filter(|&k| {
                let (a, b) = g.position_mm(k);
                (a - x).abs().max((b - y).abs()) <= radius_mm + 1e-9
            })
            .collect()
    }

    #[test]
    fn candidate_set_sizes() {
        let g = paper_grid();
        let p = paper_mobility();
        let interior = g.index(10, 10).unwrap();
        assert_eq!(candidate_set(interior, &g, &p).len(), 25);
        assert_eq!(candidate_set(interior, &g, &p), brute_ball(&g, interior, 4.0));
        assert_eq!(candidate_set(0, &g, &p).len(), 9);
        let slow = MobilityParams::from_limits(1.0, 5.0).unwrap();
        assert_eq!(candidate_set(interior, &g, &slow), vec![interior]);
    }

    #[test]
    fn reachable_set_examples() {
        let g = paper_grid();
        let p = paper_mobility();
        let interior = g.index(10, 10).unwrap();
        assert_eq!(reachable_set(interior, 1, &g, &p), candidate_set(interior, &g, &p));
        assert_eq!(reachable_set(interior, 2, &g, &p).len(), 81);
        assert_eq!(reachable_set(interior, 2, &g, &p), brute_ball(&g, interior, 8.0));
        assert_eq!(reachable_set(interior, 0, &g, &p), vec![interior]);
        assert_eq!(reachable_set(interior, 50, &g, &p).len(), g.len());
    }

    #[test]
    fn trajectory_json_is_one_based() {
        let t = Trajectory { initial: vec![0, 8], selections: vec![vec![2, 6]] };
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"initial":[1,9],"selections":[[3,7]]}"#);
        let back: Trajectory = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<Trajectory>(r#"{"initial":[0],"selections":[]}"#).is_err());
    }

    #[test]
    fn grid_json_round_trip() {
        let g = paper_grid();
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains("step_mm") && s.contains("side_mm") && s.contains("wavelength_mm"));
        let back: PositionGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn trajectory_check_reports_violations() {
        let g = PositionGrid::with_side(4.0, 2.0, 10.0).unwrap();
        let p = MobilityParams::from_limits(2.0, 5.0).unwrap();
        let ok = Trajectory { initial: vec![0, 8], selections: vec![vec![0, 8], vec![3, 5]] };
        assert!(ok.check(&g, &p).is_err()); // (0,1) and (2,1) are 4 mm apart
        let ok = Trajectory { initial: vec![0, 8], selections: vec![vec![0, 8], vec![2, 6]] };
        assert_eq!(ok.check(&g, &p), Err(TrajectoryViolation::Mobility { snapshot: 2, element: 0 }));
        let ok = Trajectory { initial: vec![0, 8], selections: vec![vec![1, 7]] };
        assert_eq!(ok.check(&g, &p), Err(TrajectoryViolation::Spacing { snapshot: 1 }));
        let good = Trajectory { initial: vec![0, 8], selections: vec![vec![0, 8]] };
        assert!(good.is_feasible(&g, &p));
    }

    #[test]
    fn random_initial_respects_spacing() {
        let g = paper_grid();
        let p = paper_mobility();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let b0 = random_initial(&g, &p, 4, &mut rng).unwrap();
            assert!(min_distance_feasible(&b0, &g, &p));
        }
        let tiny = PositionGrid::with_side(2.0, 2.0, 10.0).unwrap();
        assert!(random_initial(&tiny, &p, 2, &mut rng).is_err());
    }
}
