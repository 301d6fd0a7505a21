//! Transport cost functions.
//!
//! Each registered cost exposes its value `c(x, y)` and the analytic
//! gradient in the target argument, which is what lets the training loop
//! differentiate `c(x, T(x))` through the map. Domain violations carry
//! distinct error codes (see [`CostError`]).

use serde::{Deserialize, Serialize};

use crate::error::{CostError, Result};

/// Class information attached to a sample. Integer labels compare by
/// equality; probability vectors (classifier outputs) compare by argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Probs(Vec<f64>),
}

impl Label {
    /// The represented class index.
    pub fn class(&self) -> usize {
        match self {
            Label::Class(c) => *c,
            Label::Probs(p) => {
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                best
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CostKind {
    /// `scale * ||x - y||^2`.
    Quadratic { scale: f64 },
    /// `1 / ||x - y||^2`; undefined at coincident points.
    InverseSquare,
    /// `-<x, y> / (||x|| ||y||)`.
    NegCosine,
    /// Great-circle distance between `(theta, phi)` pairs, scaled by radius.
    SphereGeodesic { radius: f64 },
    /// `pi/2 - (sin p1 sin p2 cos(t1 - t2) + cos p1 cos p2)`, the smooth
    /// surrogate that avoids the arccos gradient blowup near +/-1.
    SphereLinearized,
    /// `alpha * ||x (.) M - y (.) M||^2 / n` with a binary mask `M`.
    MaskedMse { mask: Vec<f64>, alpha: f64 },
    /// `scale * ||x - y||^2 + lambda * 1(label_x != label_y)`.
    ClassContrastive { lambda: f64, scale: f64 },
}

/// A cost kind together with the `(n, m)` dimensions it operates on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    kind: CostKind,
    dims: (usize, usize),
}

const SPHERE_RANGE_TOL: f64 = 1e-9;
/// Gradient of `arccos` is refused once `|inner|` exceeds this.
const GEODESIC_POLE_TOL: f64 = 1e-6;

impl CostSpec {
    pub fn new(kind: CostKind, dims: (usize, usize)) -> Result<Self> {
        let (n, m) = dims;
        if n == 0 || m == 0 {
            return Err(CostError::Param("zero dimension").into());
        }
        match &kind {
            CostKind::Quadratic { scale } | CostKind::ClassContrastive { scale, .. } => {
                if !scale.is_finite() || *scale <= 0.0 {
                    return Err(CostError::Param("scale must be positive").into());
                }
                if n != m {
                    return Err(CostError::Dims {
                        n,
                        m: n,
                        got_x: n,
                        got_y: m,
                    }
                    .into());
                }
                if let CostKind::ClassContrastive { lambda, .. } = &kind {
                    if !lambda.is_finite() || *lambda < 0.0 {
                        return Err(CostError::Param("lambda must be nonnegative").into());
                    }
                }
            }
            CostKind::InverseSquare | CostKind::NegCosine => {
                if n != m {
                    return Err(CostError::Dims {
                        n,
                        m: n,
                        got_x: n,
                        got_y: m,
                    }
                    .into());
                }
            }
            CostKind::SphereGeodesic { radius } => {
                if !radius.is_finite() || *radius <= 0.0 {
                    return Err(CostError::Param("radius must be positive").into());
                }
                if dims != (2, 2) {
                    return Err(CostError::Param("sphere costs take (theta, phi) pairs").into());
                }
            }
            CostKind::SphereLinearized => {
                if dims != (2, 2) {
                    return Err(CostError::Param("sphere costs take (theta, phi) pairs").into());
                }
            }
            CostKind::MaskedMse { mask, alpha } => {
                if mask.len() != m {
                    return Err(CostError::MaskLength {
                        expected: m,
                        got: mask.len(),
                    }
                    .into());
                }
                if !mask.iter().all(|&v| v == 0.0 || v == 1.0) {
                    return Err(CostError::MaskBinary.into());
                }
                if !alpha.is_finite() || *alpha < 0.0 {
                    return Err(CostError::Param("alpha must be nonnegative").into());
                }
                if n != m {
                    return Err(CostError::Dims {
                        n,
                        m: n,
                        got_x: n,
                        got_y: m,
                    }
                    .into());
                }
            }
        }
        Ok(Self { kind, dims })
    }

    /// Quadratic cost with unit scale on `R^d x R^d`.
    pub fn quadratic(d: usize) -> Self {
        Self::new(CostKind::Quadratic { scale: 1.0 }, (d, d)).expect("valid by construction")
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    /// Kind string used in configuration files.
    pub fn config_name(&self) -> &'static str {
        match self.kind {
            CostKind::Quadratic { .. } => "quadratic",
            CostKind::InverseSquare => "inverse_square",
            CostKind::NegCosine => "neg_cosine",
            CostKind::SphereGeodesic { .. } => "sphere_geodesic",
            CostKind::SphereLinearized => "sphere_linearized",
            CostKind::MaskedMse { .. } => "masked_mse",
            CostKind::ClassContrastive { .. } => "class_contrastive",
        }
    }

    /// True for the kinds with `c(x, y) = c(y, x)`.
    pub fn symmetric(&self) -> bool {
        matches!(
            self.kind,
            CostKind::Quadratic { .. }
                | CostKind::InverseSquare
                | CostKind::SphereGeodesic { .. }
                | CostKind::SphereLinearized
        )
    }

    /// Whether the posterior error bound's cost assumption (`d2c/dy2`
    /// independent of `x`) holds for this kind.
    pub fn bound_assumption_met(&self) -> bool {
        matches!(
            self.kind,
            CostKind::Quadratic { .. } | CostKind::MaskedMse { .. } | CostKind::ClassContrastive { .. }
        )
    }

    fn check_dims(&self, x: &[f64], y: &[f64]) -> Result<()> {
        let (n, m) = self.dims;
        if x.len() != n || y.len() != m {
            return Err(CostError::Dims {
                n,
                m,
                got_x: x.len(),
                got_y: y.len(),
            }
            .into());
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(CostError::NonFiniteInput.into());
        }
        Ok(())
    }

    /// `c(x, y)`. Labels are required by (and only by) the
    /// class-contrastive kind.
    pub fn eval(&self, x: &[f64], y: &[f64], labels: Option<(&Label, &Label)>) -> Result<f64> {
        self.check_dims(x, y)?;
        let value = match &self.kind {
            CostKind::Quadratic { scale } => scale * sq_dist(x, y),
            CostKind::InverseSquare => {
                let d2 = sq_dist(x, y);
                let v = 1.0 / d2;
                if !v.is_finite() {
                    return Err(CostError::CoincidentPoints.into());
                }
                v
            }
            CostKind::NegCosine => -cosine_similarity(x, y)?,
            CostKind::SphereGeodesic { radius } => {
                check_sphere_range(x)?;
                check_sphere_range(y)?;
                radius * sphere_inner(x, y).clamp(-1.0, 1.0).acos()
            }
            CostKind::SphereLinearized => std::f64::consts::FRAC_PI_2 - sphere_inner(x, y),
            CostKind::MaskedMse { mask, alpha } => {
                let n = self.dims.0 as f64;
                let mut acc = 0.0;
                for i in 0..x.len() {
                    let d = (x[i] - y[i]) * mask[i];
                    acc += d * d;
                }
                alpha * acc / n
            }
            CostKind::ClassContrastive { lambda, scale } => {
                let (lx, ly) = labels.ok_or(CostError::MissingLabels)?;
                let indicator = if lx.class() != ly.class() { 1.0 } else { 0.0 };
                scale * sq_dist(x, y) + lambda * indicator
            }
        };
        Ok(value)
    }

    /// Gradient of `c(x, .)` at `y`. Matches central finite differences of
    /// [`CostSpec::eval`] away from each kind's singular set.
    pub fn grad_y(&self, x: &[f64], y: &[f64], labels: Option<(&Label, &Label)>) -> Result<Vec<f64>> {
        self.check_dims(x, y)?;
        let grad = match &self.kind {
            CostKind::Quadratic { scale } => {
                x.iter().zip(y).map(|(&a, &b)| 2.0 * scale * (b - a)).collect()
            }
            CostKind::InverseSquare => {
                let d2 = sq_dist(x, y);
                if 1.0 / d2 == f64::INFINITY || !d2.is_finite() {
                    return Err(CostError::CoincidentPoints.into());
                }
                let f = -2.0 / (d2 * d2);
                x.iter().zip(y).map(|(&a, &b)| f * (b - a)).collect()
            }
            CostKind::NegCosine => {
                let nx = norm(x);
                let ny = norm(y);
                if nx == 0.0 || ny == 0.0 {
                    return Err(CostError::ZeroVector.into());
                }
                let dot: f64 = x.iter().zip(y).map(|(&a, &b)| a * b).sum();
                let mut g = vec![0.0; y.len()];
                for i in 0..y.len() {
                    g[i] = -x[i] / (nx * ny) + dot * y[i] / (nx * ny * ny * ny);
                }
                g
            }
            CostKind::SphereGeodesic { radius } => {
                check_sphere_range(x)?;
                check_sphere_range(y)?;
                let inner = sphere_inner(x, y);
                if inner.abs() > 1.0 - GEODESIC_POLE_TOL {
                    return Err(CostError::GeodesicPole { inner }.into());
                }
                let d_arccos = -radius / (1.0 - inner * inner).sqrt();
                let (di_dt, di_dp) = sphere_inner_grad_y(x, y);
                vec![d_arccos * di_dt, d_arccos * di_dp]
            }
            CostKind::SphereLinearized => {
                let (di_dt, di_dp) = sphere_inner_grad_y(x, y);
                vec![-di_dt, -di_dp]
            }
            CostKind::MaskedMse { mask, alpha } => {
                let n = self.dims.0 as f64;
                (0..y.len())
                    .map(|i| 2.0 * alpha * mask[i] * (y[i] - x[i]) / n)
                    .collect()
            }
            CostKind::ClassContrastive { scale, .. } => {
                // Indicator term is constant in y at fixed labels.
                if labels.is_none() {
                    return Err(CostError::MissingLabels.into());
                }
                x.iter().zip(y).map(|(&a, &b)| 2.0 * scale * (b - a)).collect()
            }
        };
        Ok(grad)
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|&v| v * v).sum::<f64>().sqrt()
}

fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(CostError::ZeroVector.into());
    }
    let dot: f64 = x.iter().zip(y).map(|(&a, &b)| a * b).sum();
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

/// Cosine of the geodesic angle between two `(theta, phi)` points. Always in
/// `[-1, 1]` up to rounding, for arbitrary real angles.
fn sphere_inner(x: &[f64], y: &[f64]) -> f64 {
    let (t1, p1) = (x[0], x[1]);
    let (t2, p2) = (y[0], y[1]);
    p1.sin() * p2.sin() * (t1 - t2).cos() + p1.cos() * p2.cos()
}

/// Partial derivatives of [`sphere_inner`] in `(theta_2, phi_2)`.
fn sphere_inner_grad_y(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (t1, p1) = (x[0], x[1]);
    let (t2, p2) = (y[0], y[1]);
    let dt = p1.sin() * p2.sin() * (t1 - t2).sin();
    let dp = p1.sin() * p2.cos() * (t1 - t2).cos() - p1.cos() * p2.sin();
    (dt, dp)
}

fn check_sphere_range(p: &[f64]) -> Result<()> {
    let (theta, phi) = (p[0], p[1]);
    let two_pi = 2.0 * std::f64::consts::PI;
    if theta < -SPHERE_RANGE_TOL
        || theta >= two_pi + SPHERE_RANGE_TOL
        || !(-SPHERE_RANGE_TOL..=std::f64::consts::PI + SPHERE_RANGE_TOL).contains(&phi)
    {
        return Err(CostError::SphereRange { theta, phi }.into());
    }
    Ok(())
}
