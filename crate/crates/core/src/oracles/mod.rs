//! Exact and closed-form transport solvers at desk scale.
//!
//! These are the ground truth the trained maps are judged against: an exact
//! assignment solver for equal-weight empirical measures, a log-domain
//! Sinkhorn for entropic approximations, the 1D monotone rearrangement, and
//! the Gaussian quadratic-cost closed form.

mod assignment;

pub use assignment::{assignment_cost, solve_assignment};

use nalgebra::{DMatrix, DVector};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cap for the exact O(n^3) solver.
pub const EXACT_MAX_N: usize = 512;

/// A coupling between two equal-size empirical measures with uniform
/// weights `1/n`.
#[derive(Debug, Clone)]
pub struct DiscreteCoupling {
    pub n: usize,
    /// Row-major `n x n` plan; rows and columns sum to `1/n`.
    pub plan: Vec<f64>,
    /// Transport cost `sum_ij plan_ij c(x_i, y_j)`.
    pub cost: f64,
    /// Present when the plan is `1/n` times a permutation matrix.
    pub assignment: Option<Vec<usize>>,
    /// Entropic regularization strength, when the plan came from Sinkhorn.
    pub epsilon: Option<f64>,
    /// `n * epsilon * ln n`, the recorded gap bound for entropic plans.
    pub entropic_gap_bound: Option<f64>,
}

impl DiscreteCoupling {
    /// Largest deviation of any row or column sum from `1/n`.
    pub fn max_marginal_violation(&self) -> f64 {
        let n = self.n;
        let target = 1.0 / n as f64;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let row: f64 = self.plan[i * n..(i + 1) * n].iter().sum();
            worst = worst.max((row - target).abs());
        }
        for j in 0..n {
            let col: f64 = (0..n).map(|i| self.plan[i * n + j]).sum();
            worst = worst.max((col - target).abs());
        }
        worst
    }

    /// CSV body of `(i, j, mass)` triples for nonzero entries.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("i,j,mass\n");
        for i in 0..self.n {
            for j in 0..self.n {
                let m = self.plan[i * self.n + j];
                if m > 0.0 {
                    out.push_str(&format!("{i},{j},{m}\n"));
                }
            }
        }
        out
    }

    /// JSON header carrying the size and cost.
    pub fn header_json(&self) -> String {
        serde_json::json!({
            "n": self.n,
            "cost": self.cost,
            "epsilon": self.epsilon,
            "max_marginal_violation": self.max_marginal_violation(),
        })
        .to_string()
    }
}

fn cost_matrix(x: &Tensor, y: &Tensor, cost: &CostSpec) -> Result<Vec<f64>> {
    let n = x.rows();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = cost.eval(x.row(i), y.row(j), None)?;
        }
    }
    Ok(c)
}

fn check_equal_sizes(x: &Tensor, y: &Tensor) -> Result<usize> {
    let n = x.rows();
    if y.rows() != n {
        return Err(Error::DimMismatch {
            context: "sample counts",
            expected: n,
            got: y.rows(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("samples"));
    }
    Ok(n)
}

/// Exact optimal coupling between two equal-weight empirical measures.
///
/// With uniform weights the Kantorovich problem reduces to an assignment
/// problem (an optimal extreme point is a permutation), so the returned plan
/// is `1/n` times a permutation matrix and its cost is the global minimum
/// over all couplings.
pub fn discrete_ot_exact(x: &Tensor, y: &Tensor, cost: &CostSpec) -> Result<DiscreteCoupling> {
    let n = check_equal_sizes(x, y)?;
    if n > EXACT_MAX_N {
        return Err(Error::OracleTooLarge { n, max: EXACT_MAX_N });
    }
    let c = cost_matrix(x, y, cost)?;
    let assign = solve_assignment(&c, n);
    let total = assignment_cost(&c, n, &assign) / n as f64;
    let mut plan = vec![0.0; n * n];
    let w = 1.0 / n as f64;
    for (i, &j) in assign.iter().enumerate() {
        plan[i * n + j] = w;
    }
    Ok(DiscreteCoupling {
        n,
        plan,
        cost: total,
        assignment: Some(assign),
        epsilon: None,
        entropic_gap_bound: None,
    })
}

fn logsumexp(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropic-regularized coupling via log-domain Sinkhorn iterations.
///
/// Runs at most `iters` update sweeps, exiting early once the marginal
/// violation drops below `1e-6`. The log-domain updates keep small `epsilon`
/// stable where the scaling form would underflow.
pub fn sinkhorn(
    x: &Tensor,
    y: &Tensor,
    cost: &CostSpec,
    epsilon: f64,
    iters: usize,
) -> Result<DiscreteCoupling> {
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "sinkhorn epsilon must be positive, got {epsilon}"
        )));
    }
    let n = check_equal_sizes(x, y)?;
    let c = cost_matrix(x, y, cost)?;
    if !c.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("sinkhorn cost matrix"));
    }

    let nf = n as f64;
    let log_w = -(nf.ln()); // uniform weights 1/n
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];

    // Columns carry the residual error; rows are exact after the f update.
    let column_violation = |f: &[f64], g: &[f64]| -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let col = logsumexp((0..n).map(|i| log_w + (f[i] + g[j] - c[i * n + j]) / epsilon))
                .exp()
                * (1.0 / nf);
            worst = worst.max((col - 1.0 / nf).abs());
        }
        worst
    };

    // Each sweep updates g then f, so the returned plan always has exact
    // row marginals regardless of where iteration stops.
    for it in 0..iters {
        for j in 0..n {
            let lse = logsumexp((0..n).map(|i| log_w + (f[i] - c[i * n + j]) / epsilon));
            g[j] = -epsilon * lse;
        }
        for i in 0..n {
            let lse = logsumexp((0..n).map(|j| log_w + (g[j] - c[i * n + j]) / epsilon));
            f[i] = -epsilon * lse;
        }
        if (it + 1) % 10 == 0 && column_violation(&f, &g) <= 1e-6 {
            break;
        }
    }

    let mut plan = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            // P_ij = (1/n)(1/n) exp((f_i + g_j - C_ij) / eps)
            let p = (2.0 * log_w + (f[i] + g[j] - c[i * n + j]) / epsilon).exp();
            plan[i * n + j] = p;
            total += p * c[i * n + j];
        }
    }
    Ok(DiscreteCoupling {
        n,
        plan,
        cost: total,
        assignment: None,
        epsilon: Some(epsilon),
        entropic_gap_bound: Some(nf * epsilon * nf.ln()),
    })
}

/// The 1D monotone rearrangement: i-th order statistic to i-th order
/// statistic, optimal for any cost `h(|x - y|)` with convex `h`.
#[derive(Debug, Clone)]
pub struct MonotoneMap1d {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

/// Builds the monotone map from sorted samples. Ties keep their original
/// (stable) order, so plans are deterministic.
pub fn monotone_map_1d(xs: &[f64], ys: &[f64]) -> Result<MonotoneMap1d> {
    if xs.len() != ys.len() {
        return Err(Error::DimMismatch {
            context: "sample counts",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.is_empty() {
        return Err(Error::Empty("samples"));
    }
    for (i, w) in xs.windows(2).enumerate() {
        if w[0] > w[1] {
            return Err(Error::NotSorted(i + 1));
        }
    }
    for (i, w) in ys.windows(2).enumerate() {
        if w[0] > w[1] {
            return Err(Error::NotSorted(i + 1));
        }
    }
    Ok(MonotoneMap1d {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
    })
}

impl MonotoneMap1d {
    /// Piecewise-linear evaluation through the matched order statistics.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 || x <= self.xs[0] {
            return self.ys[0] + (x - self.xs[0]) * self.edge_slope(true);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + (x - self.xs[n - 1]) * self.edge_slope(false);
        }
        let hi = self.xs.partition_point(|&v| v <= x);
        let lo = hi - 1;
        let (x0, x1) = (self.xs[lo], self.xs[hi]);
        let (y0, y1) = (self.ys[lo], self.ys[hi]);
        if x1 == x0 {
            y0
        } else {
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    }

    fn edge_slope(&self, _low: bool) -> f64 {
        // Constant extrapolation keeps evaluations inside the target range.
        0.0
    }

    /// Mean cost `1/n sum h(|x_(i) - y_(i)|)`.
    pub fn cost(&self, h: impl Fn(f64) -> f64) -> f64 {
        let n = self.xs.len() as f64;
        self.xs
            .iter()
            .zip(&self.ys)
            .map(|(&a, &b)| h((a - b).abs()))
            .sum::<f64>()
            / n
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().zip(&self.ys).map(|(&a, &b)| (a, b))
    }
}

/// The quadratic-cost Monge map between two Gaussians and its exact cost.
#[derive(Debug, Clone)]
pub struct GaussianOtSolution {
    pub d: usize,
    /// Row-major `d x d` symmetric positive definite matrix.
    pub a_matrix: Vec<f64>,
    pub mean_a: Vec<f64>,
    pub mean_b: Vec<f64>,
    pub w2_squared: f64,
}

impl GaussianOtSolution {
    /// `T(x) = mean_b + A (x - mean_a)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut out = self.mean_b.clone();
        for r in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += self.a_matrix[r * d + c] * (x[c] - self.mean_a[c]);
            }
            out[r] += acc;
        }
        out
    }
}

const EIG_FLOOR: f64 = 1e-12;

fn sym_eig_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let sym = m.clone().symmetric_eigen();
    if sym.eigenvalues.iter().any(|&l| l < -1e-10) {
        return Err(Error::NotSpd("negative eigenvalue"));
    }
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        sym.eigenvalues.len(),
        sym.eigenvalues.iter().map(|&l| f(l.max(EIG_FLOOR))),
    ));
    Ok(&sym.eigenvectors * d * sym.eigenvectors.transpose())
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    for r in 0..m.nrows() {
        for c in 0..r {
            if (m[(r, c)] - m[(c, r)]).abs() > 1e-9 * scale {
                return Err(Error::NotSpd("matrix not symmetric"));
            }
        }
    }
    Ok(())
}

/// Closed-form quadratic-cost OT between `N(mean_a, cov_a)` and
/// `N(mean_b, cov_b)`:
///
/// `A = cov_a^{-1/2} (cov_a^{1/2} cov_b cov_a^{1/2})^{1/2} cov_a^{-1/2}` and
/// `W2^2 = ||mean_a - mean_b||^2 + tr(cov_a + cov_b - 2 (cov_a^{1/2} cov_b cov_a^{1/2})^{1/2})`.
///
/// Covariances are row-major `d x d` and must be symmetric positive
/// definite; matrix square roots use symmetric eigendecomposition with a
/// small eigenvalue floor.
pub fn gaussian_w2(
    mean_a: &[f64],
    cov_a: &[f64],
    mean_b: &[f64],
    cov_b: &[f64],
) -> Result<GaussianOtSolution> {
    let d = mean_a.len();
    if mean_b.len() != d {
        return Err(Error::DimMismatch {
            context: "gaussian means",
            expected: d,
            got: mean_b.len(),
        });
    }
    if cov_a.len() != d * d || cov_b.len() != d * d {
        return Err(Error::ShapeMismatch {
            expected: d * d,
            got: cov_a.len().max(cov_b.len()),
        });
    }
    let ca = DMatrix::from_row_slice(d, d, cov_a);
    let cb = DMatrix::from_row_slice(d, d, cov_b);
    check_symmetric(&ca)?;
    check_symmetric(&cb)?;

    let sqrt_a = sym_eig_fn(&ca, f64::sqrt)?;
    let inv_sqrt_a = sym_eig_fn(&ca, |l| 1.0 / l.sqrt())?;
    let middle = &sqrt_a * &cb * &sqrt_a;
    let sqrt_middle = sym_eig_fn(&middle, f64::sqrt)?;
    let mut a = &inv_sqrt_a * &sqrt_middle * &inv_sqrt_a;
    // Symmetrize away the rounding skew.
    a = (&a + a.transpose()) * 0.5;

    let mean_diff_sq: f64 = mean_a
        .iter()
        .zip(mean_b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    let w2_squared = mean_diff_sq + ca.trace() + cb.trace() - 2.0 * sqrt_middle.trace();

    Ok(GaussianOtSolution {
        d,
        a_matrix: a.transpose().as_slice().to_vec(), // nalgebra stores column-major
        mean_a: mean_a.to_vec(),
        mean_b: mean_b.to_vec(),
        w2_squared: w2_squared.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostSpec;

    fn points_1d(vals: &[f64]) -> Tensor {
        Tensor::matrix(vals.len(), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn identity_instance_has_zero_cost() {
        let x = points_1d(&[0.5, 1.5, -2.0]);
        let c = CostSpec::quadratic(1);
        let sol = discrete_ot_exact(&x, &x, &c).unwrap();
        assert!(sol.cost.abs() < 1e-12);
        assert!(sol.max_marginal_violation() < 1e-12);
    }

    #[test]
    fn two_point_instance() {
        // {0, 1} -> {1, 2}: parallel matching costs (1 + 1)/2 = 1,
        // crossing costs (4 + 1)/2 = 2.5.
        let x = points_1d(&[0.0, 1.0]);
        let y = points_1d(&[1.0, 2.0]);
        let c = CostSpec::quadratic(1);
        let sol = discrete_ot_exact(&x, &y, &c).unwrap();
        assert!((sol.cost - 1.0).abs() < 1e-12);
        assert_eq!(sol.assignment.as_ref().unwrap(), &vec![0, 1]);
    }

    #[test]
    fn size_cap_enforced() {
        let x = Tensor::zeros(vec![EXACT_MAX_N + 1, 1]);
        let c = CostSpec::quadratic(1);
        assert!(matches!(
            discrete_ot_exact(&x, &x, &c),
            Err(Error::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn delta_to_gaussian_cost_is_second_moment() {
        // Source all zeros: every coupling costs mean |y|^2 under |x - y|^2.
        use rand::Rng;
        let mut gen = crate::rng::stream_rng(23, 0);
        let n = 128;
        let ys: Vec<f64> = (0..n)
            .map(|_| {
                let u1: f64 = gen.gen_range(1e-12..1.0);
                let u2: f64 = gen.gen_range(0.0..std::f64::consts::TAU);
                (-2.0 * u1.ln()).sqrt() * u2.cos()
            })
            .collect();
        let x = Tensor::zeros(vec![n, 1]);
        let mut sorted = ys.clone();
        sorted.sort_by(f64::total_cmp);
        let y = points_1d(&sorted);
        let c = CostSpec::quadratic(1);
        let sol = discrete_ot_exact(&x, &y, &c).unwrap();
        let second_moment: f64 = ys.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((sol.cost - second_moment).abs() < 1e-9);
    }

    #[test]
    fn sinkhorn_large_epsilon_is_uniform() {
        let x = points_1d(&[0.0, 1.0, 2.0]);
        let y = points_1d(&[0.5, 1.5, 2.5]);
        let c = CostSpec::quadratic(1);
        let sol = sinkhorn(&x, &y, &c, 1e4, 500).unwrap();
        for &p in &sol.plan {
            assert!((p - 1.0 / 9.0).abs() < 1e-4);
        }
    }

    #[test]
    fn sinkhorn_small_epsilon_approaches_exact() {
        let x = points_1d(&[0.0, 1.0]);
        let y = points_1d(&[1.0, 2.0]);
        let c = CostSpec::quadratic(1);
        let sol = sinkhorn(&x, &y, &c, 0.01, 5000).unwrap();
        assert!((sol.cost - 1.0).abs() < 0.05, "cost = {}", sol.cost);
        // Row marginals are exact by construction of the sweep order.
        let n = sol.n;
        for i in 0..n {
            let row: f64 = sol.plan[i * n..(i + 1) * n].iter().sum();
            assert!((row - 1.0 / n as f64).abs() <= 1e-6);
        }
    }

    #[test]
    fn monotone_map_examples() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let ys: Vec<f64> = xs.iter().map(|v| v + 1.0).collect();
        let m = monotone_map_1d(&xs, &ys).unwrap();
        let cost = m.cost(|d| d * d);
        assert!((cost - 1.0).abs() < 1e-12);
        assert!((m.eval(0.37) - 1.37).abs() < 1e-9);

        let id = monotone_map_1d(&xs, &xs).unwrap();
        assert!(id.cost(|d| d * d).abs() < 1e-15);

        assert!(monotone_map_1d(&[1.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn monotone_map_angular_cap() {
        // Uniform [0, pi/4] to uniform [3pi/4, pi] under |dphi|: the shift
        // phi + 3pi/4.
        use std::f64::consts::PI;
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|i| PI / 4.0 * i as f64 / (n - 1) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|v| v + 3.0 * PI / 4.0).collect();
        let m = monotone_map_1d(&xs, &ys).unwrap();
        assert!((m.eval(PI / 8.0) - 7.0 * PI / 8.0).abs() < 1e-9);
        assert!((m.cost(|d| d) - 3.0 * PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_translation() {
        let sol = gaussian_w2(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0], &[3.0, -4.0], &[1.0, 0.0, 0.0, 1.0])
            .unwrap();
        assert!((sol.w2_squared - 25.0).abs() < 1e-9);
        let y = sol.apply(&[1.0, 1.0]);
        assert!((y[0] - 4.0).abs() < 1e-9 && (y[1] - (-3.0)).abs() < 1e-9);
    }

    #[test]
    fn gaussian_1d_scaling() {
        // N(0,1) -> N(2,4): A = 2, W2^2 = 4 + (1 - 2)^2 = 5.
        let sol = gaussian_w2(&[0.0], &[1.0], &[2.0], &[4.0]).unwrap();
        assert!((sol.a_matrix[0] - 2.0).abs() < 1e-9);
        assert!((sol.w2_squared - 5.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_identity_and_spd_check() {
        let sol = gaussian_w2(&[1.0], &[2.0], &[1.0], &[2.0]).unwrap();
        assert!(sol.w2_squared.abs() < 1e-12);
        assert!((sol.a_matrix[0] - 1.0).abs() < 1e-9);

        assert!(gaussian_w2(&[0.0], &[-1.0], &[0.0], &[1.0]).is_err());
    }
}
