//! Spherical coordinates, land-cell sets, and the map-to-land transform.
//!
//! The sphere is parameterized by `(theta, phi)` on `D = [0, 2pi) x [0, pi]`,
//! with `(theta, phi)` mapping to `(cos t sin p, sin t sin p, cos p)`. Land
//! data arrives as a point cloud of cells; membership is "within a
//! grid-resolution threshold of some cell", and the snap transform `tau`
//! moves sea points to the nearest anchor under the plain Euclidean norm on
//! raw angles (so there is a known seam artifact near `theta = 0`, which is
//! deliberate).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

const PHI_TOL: f64 = 1e-9;
const TWO_PI: f64 = 2.0 * PI;

/// A point on the unit sphere in angular coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    theta: f64,
    phi: f64,
}

impl SpherePoint {
    /// Wraps `theta` into `[0, 2pi)`; `phi` outside `[-1e-9, pi + 1e-9]` is
    /// an error, tiny overshoot is clamped.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::NonFinite("sphere point"));
        }
        if !(-PHI_TOL..=PI + PHI_TOL).contains(&phi) {
            return Err(Error::PhiOutOfRange(phi));
        }
        let mut t = theta.rem_euclid(TWO_PI);
        if t >= TWO_PI {
            t = 0.0;
        }
        Ok(Self {
            theta: t,
            phi: phi.clamp(0.0, PI),
        })
    }

    /// Lenient construction for raw map outputs: wraps `theta`, clamps
    /// `phi` into `[0, pi]` however far out it is.
    pub fn clamped(theta: f64, phi: f64) -> Self {
        let mut t = theta.rem_euclid(TWO_PI);
        if !t.is_finite() || t >= TWO_PI {
            t = 0.0;
        }
        Self {
            theta: t,
            phi: if phi.is_finite() { phi.clamp(0.0, PI) } else { 0.0 },
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn to_cartesian(&self, radius: f64) -> [f64; 3] {
        debug_assert!(radius > 0.0);
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [radius * ct * sp, radius * st * sp, radius * cp]
    }

    pub fn from_cartesian(v: [f64; 3]) -> Result<Self> {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r < 1e-300 {
            return Err(Error::Empty("zero vector has no spherical coordinates"));
        }
        let phi = (v[2] / r).clamp(-1.0, 1.0).acos();
        let theta = v[1].atan2(v[0]);
        Self::new(theta, phi)
    }

    /// Geodesic angle to another point (radians).
    pub fn angle_to(&self, other: &SpherePoint) -> f64 {
        let inner = self.phi.sin() * other.phi.sin() * (self.theta - other.theta).cos()
            + self.phi.cos() * other.phi.cos();
        inner.clamp(-1.0, 1.0).acos()
    }

    /// Euclidean distance in raw `(theta, phi)` coordinates, no wrap.
    pub fn angular_euclid(&self, other: &SpherePoint) -> f64 {
        let dt = self.theta - other.theta;
        let dp = self.phi - other.phi;
        (dt * dt + dp * dp).sqrt()
    }

    /// Converts geographic degrees (`lat` in [-90, 90], any `lon`) to
    /// colatitude coordinates.
    pub fn from_lat_lon_degrees(lat: f64, lon: f64) -> Result<Self> {
        let theta = lon.to_radians();
        let phi = (90.0 - lat).to_radians();
        Self::new(theta, phi)
    }
}

/// A set of land cells with a subsample of anchor points for `tau`.
#[derive(Debug, Clone)]
pub struct LandSet {
    points: Vec<SpherePoint>,
    anchors: Vec<usize>,
    cell_spacing: f64,
    membership_tol: f64,
    jitter: f64,
    grid: HashMap<(i64, i64), Vec<u32>>,
    grid_step: f64,
}

impl LandSet {
    /// Builds the set from cells, deduplicating exact duplicates and
    /// choosing `anchor_count` anchors by a seeded uniform subsample.
    pub fn from_points(points: Vec<SpherePoint>, anchor_count: usize, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("land set"));
        }
        let mut seen = std::collections::HashSet::new();
        let mut dedup = Vec::with_capacity(points.len());
        for p in points {
            if seen.insert((p.theta.to_bits(), p.phi.to_bits())) {
                dedup.push(p);
            }
        }
        let spacing = estimate_spacing(&dedup);
        let membership_tol = 0.75 * spacing;
        let jitter = 0.5 * spacing;

        let count = anchor_count.max(1).min(dedup.len());
        let mut idx: Vec<usize> = (0..dedup.len()).collect();
        let mut gen = rng::stream_rng(seed, 0xa17c_4085);
        for i in 0..count {
            let j = gen.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        let mut anchors = idx[..count].to_vec();
        anchors.sort_unstable();

        let grid_step = membership_tol.max(spacing).max(1e-6);
        let mut grid: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in dedup.iter().enumerate() {
            grid.entry(grid_key(p, grid_step)).or_default().push(i as u32);
        }

        Ok(Self {
            points: dedup,
            anchors,
            cell_spacing: spacing,
            membership_tol,
            jitter,
            grid,
            grid_step,
        })
    }

    /// Reads a CSV of cells. The header selects the format: `lat,lon` in
    /// degrees or `theta,phi` in radians. Malformed rows report their line
    /// number.
    pub fn load_csv(path: impl AsRef<Path>, anchor_count: usize, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Empty("land csv"))?;
        let header: Vec<&str> = header.split(',').map(str::trim).collect();
        let degrees = match header.as_slice() {
            [a, b] if a.eq_ignore_ascii_case("lat") && b.eq_ignore_ascii_case("lon") => true,
            [a, b] if a.eq_ignore_ascii_case("theta") && b.eq_ignore_ascii_case("phi") => false,
            _ => {
                return Err(Error::Csv {
                    line: 1,
                    msg: "header must be `lat,lon` or `theta,phi`".into(),
                })
            }
        };
        let mut points = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let parse = |s: Option<&str>| -> std::result::Result<f64, String> {
                s.ok_or_else(|| "missing column".to_string())?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| e.to_string())
            };
            let a = parse(cols.next()).map_err(|msg| Error::Csv { line: i + 1, msg })?;
            let b = parse(cols.next()).map_err(|msg| Error::Csv { line: i + 1, msg })?;
            if cols.next().is_some() {
                return Err(Error::Csv {
                    line: i + 1,
                    msg: "expected exactly two columns".into(),
                });
            }
            let p = if degrees {
                SpherePoint::from_lat_lon_degrees(a, b)
            } else {
                SpherePoint::new(a, b)
            }
            .map_err(|e| Error::Csv {
                line: i + 1,
                msg: e.to_string(),
            })?;
            points.push(p);
        }
        Self::from_points(points, anchor_count, seed)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[SpherePoint] {
        &self.points
    }

    pub fn anchor_indices(&self) -> &[usize] {
        &self.anchors
    }

    pub fn anchor_points(&self) -> impl Iterator<Item = &SpherePoint> {
        self.anchors.iter().map(|&i| &self.points[i])
    }

    pub fn cell_spacing(&self) -> f64 {
        self.cell_spacing
    }

    pub fn membership_tol(&self) -> f64 {
        self.membership_tol
    }

    pub fn with_membership_tol(mut self, tol: f64) -> Self {
        self.membership_tol = tol;
        self
    }

    /// Distance (raw angular Euclidean) to the nearest land cell.
    pub fn nearest_cell_distance(&self, p: &SpherePoint) -> f64 {
        let key = grid_key(p, self.grid_step);
        let mut best = f64::INFINITY;
        // Expand rings of grid buckets until a hit cannot be beaten.
        for ring in 0..4i64 {
            for dt in -ring..=ring {
                for dp in -ring..=ring {
                    if dt.abs() != ring && dp.abs() != ring {
                        continue;
                    }
                    if let Some(bucket) = self.grid.get(&(key.0 + dt, key.1 + dp)) {
                        for &i in bucket {
                            best = best.min(p.angular_euclid(&self.points[i as usize]));
                        }
                    }
                }
            }
            if best <= (ring as f64) * self.grid_step {
                return best;
            }
        }
        // Far from every bucketed cell: only a full scan certifies the
        // nearest one.
        self.points
            .iter()
            .map(|q| p.angular_euclid(q))
            .fold(f64::INFINITY, f64::min)
    }

    /// Membership test: within the grid-resolution threshold of some cell.
    pub fn is_land(&self, p: &SpherePoint) -> bool {
        self.nearest_cell_distance(p) <= self.membership_tol
    }

    /// Uniform-with-replacement draw over cells plus a small coordinate
    /// jitter (default half the cell spacing). Deterministic per seed.
    pub fn sample_uniform(&self, n: usize, seed: u64, jitter: Option<f64>) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::Empty("sample count"));
        }
        let j = jitter.unwrap_or(self.jitter);
        let mut gen = rng::stream_rng(seed, 0x1a2d);
        let mut data = Vec::with_capacity(n * 2);
        for _ in 0..n {
            let cell = &self.points[gen.gen_range(0..self.points.len())];
            let dt = if j > 0.0 { gen.gen_range(-j..j) } else { 0.0 };
            let dp = if j > 0.0 { gen.gen_range(-j..j) } else { 0.0 };
            let theta = (cell.theta + dt).rem_euclid(TWO_PI);
            let phi = (cell.phi + dp).clamp(0.0, PI);
            data.push(theta);
            data.push(phi);
        }
        Tensor::matrix(n, 2, data)
    }
}

fn grid_key(p: &SpherePoint, step: f64) -> (i64, i64) {
    ((p.theta / step).floor() as i64, (p.phi / step).floor() as i64)
}

/// Median nearest-neighbor spacing, estimated on a subsample for large sets.
fn estimate_spacing(points: &[SpherePoint]) -> f64 {
    if points.len() < 2 {
        return 1e-3;
    }
    let probes = points.len().min(256);
    let stride = (points.len() / probes).max(1);
    let mut nn = Vec::with_capacity(probes);
    for i in (0..points.len()).step_by(stride) {
        let p = &points[i];
        let mut best = f64::INFINITY;
        for (k, q) in points.iter().enumerate() {
            if k != i {
                best = best.min(p.angular_euclid(q));
            }
        }
        nn.push(best);
    }
    nn.sort_by(f64::total_cmp);
    nn[nn.len() / 2].max(1e-9)
}

/// Map-to-land transform: identity on land, otherwise the nearest anchor
/// under the raw angular Euclidean norm, ties to the lowest anchor index.
pub fn tau(p: &SpherePoint, land: &LandSet, land_test: impl Fn(&SpherePoint) -> bool) -> SpherePoint {
    if land_test(p) {
        return *p;
    }
    let mut best = land.anchors[0];
    let mut best_d = p.angular_euclid(&land.points[best]);
    for &i in &land.anchors[1..] {
        let d = p.angular_euclid(&land.points[i]);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    land.points[best]
}
