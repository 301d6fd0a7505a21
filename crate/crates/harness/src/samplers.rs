//! Builtin distribution samplers for the named experiments.
//!
//! Every sampler is a pure function of `(n, seed)`, so training runs and
//! evaluations reproduce exactly. The string registry
//! ([`builtin_sampler`]) exposes the same constructions to config files
//! and tests.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use monge_core::costs::Label;
use monge_core::geo::LandSet;
use monge_core::rng::stream_rng;
use monge_core::solver::{Batch, LabelClassifier, Sampler};
use monge_core::{Error, Result, Tensor};

/// `N(mean, cov)` in `d` dimensions via a Cholesky factor.
pub struct GaussianSampler {
    mean: Vec<f64>,
    /// Row-major lower-triangular factor `L` with `L L^T = cov`.
    chol: Vec<f64>,
}

impl GaussianSampler {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::ShapeMismatch {
                expected: d * d,
                got: cov.len(),
            });
        }
        let m = DMatrix::from_row_slice(d, d, &cov);
        let chol = m
            .cholesky()
            .ok_or(Error::NotSpd("gaussian covariance"))?
            .l();
        Ok(Self {
            mean,
            chol: chol.transpose().as_slice().to_vec(),
        })
    }

    pub fn standard(d: usize) -> Self {
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 1.0;
        }
        Self::new(vec![0.0; d], cov).expect("identity is SPD")
    }

    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = variances[i];
        }
        Self::new(mean, cov)
    }
}

impl Sampler for GaussianSampler {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, n: usize, seed: u64) -> Batch {
        let d = self.mean.len();
        let mut gen = stream_rng(seed, 0x9a55);
        let mut data = vec![0.0; n * d];
        let mut z = vec![0.0; d];
        for r in 0..n {
            for zi in z.iter_mut() {
                *zi = gen.sample(StandardNormal);
            }
            let row = &mut data[r * d..(r + 1) * d];
            for i in 0..d {
                let mut acc = self.mean[i];
                for j in 0..=i {
                    acc += self.chol[i * d + j] * z[j];
                }
                row[i] = acc;
            }
        }
        Batch::unlabeled(Tensor::matrix(n, d, data).expect("finite draws"))
    }
}

/// Uniform on an interval, one-dimensional.
pub struct UniformIntervalSampler {
    pub lo: f64,
    pub hi: f64,
}

impl Sampler for UniformIntervalSampler {
    fn dim(&self) -> usize {
        1
    }

    fn sample(&self, n: usize, seed: u64) -> Batch {
        let mut gen = stream_rng(seed, 0x0417);
        let data: Vec<f64> = (0..n).map(|_| gen.gen_range(self.lo..self.hi)).collect();
        Batch::unlabeled(Tensor::matrix(n, 1, data).expect("finite draws"))
    }
}

/// The point mass at the origin.
pub struct Delta0Sampler {
    pub dim: usize,
}

impl Sampler for Delta0Sampler {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, n: usize, _seed: u64) -> Batch {
        Batch::unlabeled(Tensor::zeros(vec![n, self.dim]))
    }
}

/// Uniform on the area of the annulus `r_inner <= |x| <= r_outer`, sampled
/// by radial inverse CDF.
pub struct AnnulusSampler {
    pub r_inner: f64,
    pub r_outer: f64,
}

impl AnnulusSampler {
    pub fn new(r_inner: f64, r_outer: f64) -> Result<Self> {
        if !(0.0 <= r_inner && r_inner < r_outer) {
            return Err(Error::InvalidConfig(format!(
                "annulus needs 0 <= inner < outer, got {r_inner}, {r_outer}"
            )));
        }
        Ok(Self { r_inner, r_outer })
    }
}

impl Sampler for AnnulusSampler {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, seed: u64) -> Batch {
        let mut gen = stream_rng(seed, 0xa221);
        let (r2_lo, r2_hi) = (self.r_inner * self.r_inner, self.r_outer * self.r_outer);
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let r = gen.gen_range(r2_lo..r2_hi).sqrt();
            let ang = gen.gen_range(0.0..std::f64::consts::TAU);
            data.push(r * ang.cos());
            data.push(r * ang.sin());
        }
        Batch::unlabeled(Tensor::matrix(n, 2, data).expect("finite draws"))
    }
}

/// Product of uniforms on `[0, 2pi) x [phi_lo, phi_hi]` in spherical
/// coordinates (uniform in the coordinates, not in area).
pub struct SphereBandSampler {
    pub phi_lo: f64,
    pub phi_hi: f64,
}

impl SphereBandSampler {
    pub fn new(phi_lo: f64, phi_hi: f64) -> Result<Self> {
        if !(0.0 <= phi_lo && phi_lo < phi_hi && phi_hi <= std::f64::consts::PI) {
            return Err(Error::InvalidConfig(format!(
                "sphere band needs 0 <= lo < hi <= pi, got {phi_lo}, {phi_hi}"
            )));
        }
        Ok(Self { phi_lo, phi_hi })
    }
}

impl Sampler for SphereBandSampler {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, seed: u64) -> Batch {
        let mut gen = stream_rng(seed, 0x5983);
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            data.push(gen.gen_range(0.0..std::f64::consts::TAU));
            data.push(gen.gen_range(self.phi_lo..self.phi_hi));
        }
        Batch::unlabeled(Tensor::matrix(n, 2, data).expect("finite draws"))
    }
}

/// Uniform in arc parameter on an ellipse with a symmetric gap around
/// parameter zero: `t ~ U[gap_half, 2pi - gap_half]`, point
/// `(a cos t, b sin t)`.
pub struct EllipseGapSampler {
    pub semi_major: f64,
    pub semi_minor: f64,
    pub gap_half: f64,
}

impl EllipseGapSampler {
    pub fn new(semi_major: f64, semi_minor: f64, gap_half: f64) -> Result<Self> {
        if semi_major <= 0.0 || semi_minor <= 0.0 {
            return Err(Error::InvalidConfig("ellipse axes must be positive".into()));
        }
        if !(0.0..std::f64::consts::PI).contains(&gap_half) {
            return Err(Error::InvalidConfig("gap_half must lie in [0, pi)".into()));
        }
        Ok(Self {
            semi_major,
            semi_minor,
            gap_half,
        })
    }
}

impl Sampler for EllipseGapSampler {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, seed: u64) -> Batch {
        let mut gen = stream_rng(seed, 0xe111);
        let lo = self.gap_half;
        let hi = std::f64::consts::TAU - self.gap_half;
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let t = gen.gen_range(lo..hi);
            data.push(self.semi_major * t.cos());
            data.push(self.semi_minor * t.sin());
        }
        Batch::unlabeled(Tensor::matrix(n, 2, data).expect("finite draws"))
    }
}

/// One isotropic mixture component.
#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Labeled (or unlabeled) isotropic Gaussian mixture.
pub struct MixtureSampler {
    comps: Vec<MixtureComponent>,
    labeled: bool,
    cumulative: Vec<f64>,
}

impl MixtureSampler {
    pub fn new(comps: Vec<MixtureComponent>, labeled: bool) -> Result<Self> {
        if comps.is_empty() {
            return Err(Error::Empty("mixture components"));
        }
        let d = comps[0].mean.len();
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        if total <= 0.0 || comps.iter().any(|c| c.weight < 0.0 || c.std <= 0.0) {
            return Err(Error::InvalidConfig("bad mixture weights or stds".into()));
        }
        if comps.iter().any(|c| c.mean.len() != d) {
            return Err(Error::InvalidConfig("mixture means differ in length".into()));
        }
        let mut cumulative = Vec::with_capacity(comps.len());
        let mut acc = 0.0;
        for c in &comps {
            acc += c.weight / total;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Self {
            comps,
            labeled,
            cumulative,
        })
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.comps
    }
}

impl Sampler for MixtureSampler {
    fn dim(&self) -> usize {
        self.comps[0].mean.len()
    }

    fn sample(&self, n: usize, seed: u64) -> Batch {
        let d = self.dim();
        let mut gen = stream_rng(seed, 0x313c);
        let mut data = vec![0.0; n * d];
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            let u: f64 = gen.gen();
            let k = self.cumulative.partition_point(|&c| c < u).min(self.comps.len() - 1);
            labels.push(k);
            let comp = &self.comps[k];
            let row = &mut data[r * d..(r + 1) * d];
            for i in 0..d {
                let z: f64 = gen.sample(StandardNormal);
                row[i] = comp.mean[i] + comp.std * z;
            }
        }
        let points = Tensor::matrix(n, d, data).expect("finite draws");
        if self.labeled {
            Batch::labeled(points, labels).expect("lengths match")
        } else {
            Batch::unlabeled(points)
        }
    }
}

/// Posterior class probabilities of an isotropic Gaussian mixture; the
/// desk-scale stand-in for a pretrained target-domain classifier.
pub struct MixtureClassifier {
    comps: Vec<MixtureComponent>,
}

impl MixtureClassifier {
    pub fn new(comps: Vec<MixtureComponent>) -> Self {
        Self { comps }
    }

    pub fn from_sampler(sampler: &MixtureSampler) -> Self {
        Self {
            comps: sampler.components().to_vec(),
        }
    }

    pub fn hard_class(&self, y: &[f64]) -> usize {
        match self.classify(y) {
            Label::Probs(p) => {
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                best
            }
            Label::Class(c) => c,
        }
    }
}

impl LabelClassifier for MixtureClassifier {
    fn classify(&self, y: &[f64]) -> Label {
        let d = y.len() as f64;
        let logits: Vec<f64> = self
            .comps
            .iter()
            .map(|c| {
                let sq: f64 = y
                    .iter()
                    .zip(&c.mean)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                c.weight.max(1e-300).ln() - sq / (2.0 * c.std * c.std) - d * c.std.ln()
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        Label::Probs(exps.iter().map(|e| e / total).collect())
    }
}

/// Multivariate Gaussian with a spatially-correlated covariance over a
/// square pixel grid, the stand-in image distribution.
pub struct StructuredImageSampler {
    inner: GaussianSampler,
    side: usize,
}

impl StructuredImageSampler {
    /// RBF covariance `exp(-|p - q|^2 / (2 len^2))` over grid positions,
    /// plus a smooth radial mean pattern.
    pub fn new(side: usize, length_scale: f64) -> Result<Self> {
        let d = side * side;
        let pos = |k: usize| ((k / side) as f64, (k % side) as f64);
        let mut cov = vec![0.0; d * d];
        for p in 0..d {
            for q in 0..d {
                let (pr, pc) = pos(p);
                let (qr, qc) = pos(q);
                let dist2 = (pr - qr).powi(2) + (pc - qc).powi(2);
                cov[p * d + q] = (-dist2 / (2.0 * length_scale * length_scale)).exp();
            }
        }
        for k in 0..d {
            cov[k * d + k] += 1e-6;
        }
        let center = (side as f64 - 1.0) / 2.0;
        let mean: Vec<f64> = (0..d)
            .map(|k| {
                let (r, c) = pos(k);
                let dist2 = (r - center).powi(2) + (c - center).powi(2);
                1.5 * (-dist2 / (side as f64)).exp()
            })
            .collect();
        Ok(Self {
            inner: GaussianSampler::new(mean, cov)?,
            side,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

impl Sampler for StructuredImageSampler {
    fn dim(&self) -> usize {
        self.side * self.side
    }

    fn sample(&self, n: usize, seed: u64) -> Batch {
        self.inner.sample(n, seed)
    }
}

/// Wraps a sampler and zeroes the masked-out (`mask == 0`) coordinates,
/// producing the occluded source distribution.
pub struct OccludedSampler<S> {
    pub inner: S,
    pub mask: Vec<f64>,
}

impl<S: Sampler> Sampler for OccludedSampler<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample(&self, n: usize, seed: u64) -> Batch {
        // Distinct stream from the target draws of the same distribution.
        let mut batch = self.inner.sample(n, monge_core::rng::mix(seed, 0x0cc1));
        let d = self.mask.len();
        for r in 0..batch.points.rows() {
            let row = batch.points.row_mut(r);
            for j in 0..d {
                if self.mask[j] == 0.0 {
                    row[j] = 0.0;
                }
            }
        }
        batch
    }
}

/// Uniform over a land set's cells with jitter.
pub struct LandUniformSampler {
    pub land: Arc<LandSet>,
}

impl Sampler for LandUniformSampler {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, seed: u64) -> Batch {
        let points = self
            .land
            .sample_uniform(n, seed, None)
            .expect("nonempty land set");
        Batch::unlabeled(points)
    }
}

/// Weighted point cloud on the sphere (the population source): draws a
/// point proportional to its weight, plus jitter.
pub struct WeightedSphereSampler {
    points: Tensor,
    cumulative: Vec<f64>,
    jitter: f64,
}

impl WeightedSphereSampler {
    pub fn new(points: Tensor, weights: Vec<f64>, jitter: f64) -> Result<Self> {
        if points.rows() != weights.len() {
            return Err(Error::DimMismatch {
                context: "weight count",
                expected: points.rows(),
                got: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidConfig("weights must be nonnegative with positive sum".into()));
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Self {
            points,
            cumulative,
            jitter,
        })
    }
}

impl Sampler for WeightedSphereSampler {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, seed: u64) -> Batch {
        let mut gen = stream_rng(seed, 0x60e0);
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let u: f64 = gen.gen();
            let k = self
                .cumulative
                .partition_point(|&c| c < u)
                .min(self.points.rows() - 1);
            let row = self.points.row(k);
            let (dt, dp) = if self.jitter > 0.0 {
                (
                    gen.gen_range(-self.jitter..self.jitter),
                    gen.gen_range(-self.jitter..self.jitter),
                )
            } else {
                (0.0, 0.0)
            };
            data.push((row[0] + dt).rem_euclid(std::f64::consts::TAU));
            data.push((row[1] + dp).clamp(0.0, std::f64::consts::PI));
        }
        Batch::unlabeled(Tensor::matrix(n, 2, data).expect("finite draws"))
    }
}

fn table_f64(params: &toml::Table, key: &str) -> Result<f64> {
    params
        .get(key)
        .and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
        .ok_or_else(|| Error::InvalidConfig(format!("sampler parameter `{key}` missing or not a number")))
}

fn table_vec(params: &toml::Table, key: &str) -> Result<Vec<f64>> {
    let arr = params
        .get(key)
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::InvalidConfig(format!("sampler parameter `{key}` missing or not an array")))?;
    arr.iter()
        .map(|v| {
            v.as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| Error::InvalidConfig(format!("`{key}` entries must be numbers")))
        })
        .collect()
}

/// Name-keyed sampler registry used by config files and tests.
///
/// Registered names: `gaussian` (mean, cov_diag), `uniform_interval`
/// (lo, hi), `delta0` (dim), `annulus` (r_inner, r_outer), `sphere_band`
/// (phi_lo, phi_hi), `ellipse_gap` (semi_major, semi_minor, gap_half).
pub fn builtin_sampler(name: &str, params: &toml::Table) -> Result<Box<dyn Sampler + Send + Sync>> {
    match name {
        "gaussian" => {
            let mean = table_vec(params, "mean")?;
            let var = table_vec(params, "cov_diag")?;
            if var.len() != mean.len() {
                return Err(Error::InvalidConfig("cov_diag length must match mean".into()));
            }
            Ok(Box::new(GaussianSampler::diagonal(mean, &var)?))
        }
        "uniform_interval" => Ok(Box::new(UniformIntervalSampler {
            lo: table_f64(params, "lo")?,
            hi: table_f64(params, "hi")?,
        })),
        "delta0" => Ok(Box::new(Delta0Sampler {
            dim: table_f64(params, "dim")? as usize,
        })),
        "annulus" => Ok(Box::new(AnnulusSampler::new(
            table_f64(params, "r_inner")?,
            table_f64(params, "r_outer")?,
        )?)),
        "sphere_band" => Ok(Box::new(SphereBandSampler::new(
            table_f64(params, "phi_lo")?,
            table_f64(params, "phi_hi")?,
        )?)),
        "ellipse_gap" => Ok(Box::new(EllipseGapSampler::new(
            table_f64(params, "semi_major")?,
            table_f64(params, "semi_minor")?,
            table_f64(params, "gap_half")?,
        )?)),
        other => Err(Error::InvalidConfig(format!("unknown sampler `{other}`"))),
    }
}
