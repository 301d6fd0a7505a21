//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line (run with `-- --nocapture` to see them all). Trained runs are
//! shared between criteria through lazy statics, so the suite trains each
//! problem exactly once.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use monge_core::costs::CostSpec;
use monge_core::oracles::{discrete_ot_exact, gaussian_w2, sinkhorn, solve_assignment};
use monge_core::rng::stream_rng;
use monge_core::Tensor;
use monge_forge::config::RawConfig;
use monge_forge::experiments::run_experiment;
use monge_forge::report::ExperimentReport;
use rand::Rng;

struct SharedRun {
    report: ExperimentReport,
    dir: tempfile::TempDir,
}

fn run_shared(experiment: &str, seed: u64, extra: impl FnOnce(&mut RawConfig)) -> SharedRun {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut raw = RawConfig::for_experiment(experiment);
    raw.seed = Some(seed);
    raw.output_dir = Some(dir.path().to_path_buf());
    extra(&mut raw);
    let report = run_experiment(&raw).expect("experiment completes");
    SharedRun { report, dir }
}

fn gaussian_run() -> &'static SharedRun {
    static RUN: OnceLock<SharedRun> = OnceLock::new();
    RUN.get_or_init(|| run_shared("gaussian2d", 7, |_| {}))
}

fn line_run() -> &'static SharedRun {
    static RUN: OnceLock<SharedRun> = OnceLock::new();
    RUN.get_or_init(|| run_shared("line1d", 7, |_| {}))
}

fn check(name: &str, pass: bool, detail: String) {
    println!(
        "[acceptance] {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{name} failed: {detail}");
}

/// Oracle sandwich: a (near-)feasible learned map can never beat the
/// discrete oracle by more than its sampling noise. Checked on every
/// experiment where a transport map exists and the oracle concentrates.
fn assert_oracle_sandwich(name: &str, run: &SharedRun) {
    let extra = &run.report.deterministic.metrics.extra;
    let learned = run.report.deterministic.metrics.learned_cost.unwrap();
    let oracle = extra["oracle_discrete_512"];
    let std = extra["oracle_discrete_512_std"];
    assert!(
        learned >= oracle - 3.0 * std,
        "{name}: learned cost {learned} undercuts oracle {oracle} - 3 * {std}"
    );
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in order.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let num: f64 = ra.iter().zip(&rb).map(|(&x, &y)| (x - ma) * (y - mb)).sum();
    let da: f64 = ra.iter().map(|&x| (x - ma) * (x - ma)).sum();
    let db: f64 = rb.iter().map(|&y| (y - mb) * (y - mb)).sum();
    num / (da * db).sqrt()
}

#[test]
fn c01_delta_to_gaussian_saddle_value() {
    let run = run_shared("delta_to_gaussian", 7, |_| {});
    let d = &run.report.deterministic;
    let l = d.final_history.as_ref().unwrap().lagrangian;
    let wall = run.report.wall_time_s;
    check(
        "C1 delta_to_gaussian",
        (0.9..=1.1).contains(&l) && wall <= 120.0,
        format!("lagrangian = {l:.4} (target [0.9, 1.1]), wall = {wall:.1}s <= 120s"),
    );
}

#[test]
fn c02_gaussian2d_against_closed_form() {
    let run = gaussian_run();
    let m = &run.report.deterministic.metrics;
    let w2_sq = m.oracle_cost.unwrap();
    let w2 = w2_sq.sqrt();
    let map_err = m.map_l2_error.unwrap();
    let cost = m.learned_cost.unwrap();
    let cost_rel = (cost - w2_sq).abs() / w2_sq;
    let wall = run.report.wall_time_s;
    check(
        "C2 gaussian2d oracle",
        map_err <= 0.05 * w2 && cost_rel <= 0.05 && wall <= 600.0,
        format!(
            "map_err = {map_err:.4} <= {:.4}, cost rel err = {:.2}% <= 5%, wall = {wall:.1}s <= 600s",
            0.05 * w2,
            100.0 * cost_rel
        ),
    );
    assert_oracle_sandwich("gaussian2d", run);
}

#[test]
fn c03_line1d_monotone_oracle() {
    let run = line_run();
    let m = &run.report.deterministic.metrics;
    let max_err = m.extra["grid_max_abs_err"];
    let cost = m.learned_cost.unwrap();
    let wall = run.report.wall_time_s;
    check(
        "C3 line1d",
        max_err <= 0.05 && (0.95..=1.05).contains(&cost) && wall <= 120.0,
        format!(
            "max |T(x) - (x+1)| = {max_err:.4} <= 0.05, cost = {cost:.4} in [0.95, 1.05], wall = {wall:.1}s <= 120s"
        ),
    );
    assert_oracle_sandwich("line1d", run);
}

#[test]
fn c04_sphere_cap_ring_targets() {
    use std::f64::consts::PI;
    let run = run_shared("sphere_cap", 7, |_| {});
    let e = &run.report.deterministic.metrics.extra;
    let pi8_err = (e["ring_pi8_mean_phi"] - 7.0 * PI / 8.0).abs();
    let pi4_err = (e["ring_pi4_mean_phi"] - PI).abs();
    let wall = run.report.wall_time_s;
    check(
        "C4 sphere_cap rings",
        pi8_err <= 0.1 && pi4_err <= 0.15 && wall <= 900.0,
        format!(
            "ring pi/8 mean phi err = {pi8_err:.4} <= 0.1, ring pi/4 mean phi err = {pi4_err:.4} <= 0.15, wall = {wall:.1}s <= 900s"
        ),
    );
    assert_oracle_sandwich("sphere_cap", &run);
}

#[test]
fn c05_saddle_value_matches_discrete_oracle() {
    let mut details = Vec::new();
    let mut pass = true;
    for (name, run) in [("gaussian2d", gaussian_run()), ("line1d", line_run())] {
        let d = &run.report.deterministic;
        let l = d.final_history.as_ref().unwrap().lagrangian;
        let oracle = d.metrics.extra["oracle_discrete_512"];
        let rel = (l - oracle).abs() / oracle.abs();
        pass &= rel <= 0.05;
        details.push(format!("{name}: |L - OT_512|/OT_512 = {:.2}%", 100.0 * rel));
    }
    check("C5 saddle-value consistency", pass, details.join("; "));
}

#[test]
fn c06_bound_tracks_true_error() {
    let run = gaussian_run();
    let path = run.dir.path().join("bound_tracking.csv");
    let text = std::fs::read_to_string(path).expect("bound tracking artifact");
    let mut bounds = Vec::new();
    let mut errs = Vec::new();
    let mut gaps_ok = true;
    for line in text.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let (e1, e2, bound, err) = (cols[1], cols[2], cols[3], cols[4]);
        gaps_ok &= e1 >= -1e-6 && e2 >= -1e-6;
        bounds.push(bound);
        errs.push(err);
    }
    let rho = spearman(&bounds, &errs);
    check(
        "C6 posterior bound tracking",
        bounds.len() >= 5 && rho >= 0.8 && gaps_ok,
        format!(
            "{} checkpoints, spearman(bound, true L2 err) = {rho:.4} >= 0.8, gaps >= -1e-6: {gaps_ok}",
            bounds.len()
        ),
    );
}

#[test]
fn c07_oracle_self_consistency() {
    let t0 = Instant::now();
    let mut gen = stream_rng(1234, 0);

    // Exact assignment equals the exhaustive permutation minimum.
    let mut brute_ok = true;
    for trial in 0..50 {
        let n = 2 + trial % 6;
        let cost: Vec<f64> = (0..n * n).map(|_| gen.gen_range(-4.0..4.0)).collect();
        let assign = solve_assignment(&cost, n);
        let got: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        let best = permutation_minimum(&cost, n);
        brute_ok &= (got - best).abs() < 1e-9;
    }

    // Entropic solver within 5% of exact on separated instances.
    let mut sinkhorn_ok = true;
    let mut worst_rel: f64 = 0.0;
    let quad = CostSpec::quadratic(2);
    for trial in 0..50 {
        let n = 64;
        let xd: Vec<f64> = (0..2 * n).map(|_| gen.gen_range(0.0..1.0)).collect();
        let yd: Vec<f64> = (0..n)
            .flat_map(|_| {
                [
                    gen.gen_range(0.0..1.0) + 2.0,
                    gen.gen_range(0.0..1.0),
                ]
            })
            .collect();
        let x = Tensor::matrix(n, 2, xd).unwrap();
        let y = Tensor::matrix(n, 2, yd).unwrap();
        let exact = discrete_ot_exact(&x, &y, &quad).unwrap().cost;
        let approx = sinkhorn(&x, &y, &quad, 0.01, 400).unwrap().cost;
        let rel = (approx - exact).abs() / exact;
        worst_rel = worst_rel.max(rel);
        sinkhorn_ok &= rel <= 0.05;
        let _ = trial;
    }

    // Gaussian closed form satisfies A cov_a A = cov_b.
    let mut gauss_ok = true;
    let mut worst_frob: f64 = 0.0;
    for _ in 0..20 {
        let d = 1 + gen.gen_range(0..3usize);
        let spd = |gen: &mut rand_chacha::ChaCha8Rng| {
            let m: Vec<f64> = (0..d * d).map(|_| gen.gen_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; d * d];
            for r in 0..d {
                for c in 0..d {
                    let mut acc = if r == c { 0.4 } else { 0.0 };
                    for k in 0..d {
                        acc += m[k * d + r] * m[k * d + c];
                    }
                    out[r * d + c] = acc;
                }
            }
            out
        };
        let cov_a = spd(&mut gen);
        let cov_b = spd(&mut gen);
        let sol = gaussian_w2(&vec![0.0; d], &cov_a, &vec![0.0; d], &cov_b).unwrap();
        let a = &sol.a_matrix;
        let mut aca = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    for l in 0..d {
                        acc += a[r * d + k] * cov_a[k * d + l] * a[l * d + c];
                    }
                }
                aca[r * d + c] = acc;
            }
        }
        let num: f64 = aca
            .iter()
            .zip(&cov_b)
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        let den: f64 = cov_b.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_frob = worst_frob.max(num / den);
        gauss_ok &= num / den <= 1e-8;
    }

    let secs = t0.elapsed().as_secs_f64();
    check(
        "C7 oracle self-consistency",
        brute_ok && sinkhorn_ok && gauss_ok && secs <= 60.0,
        format!(
            "assignment == brute force: {brute_ok}; sinkhorn worst rel = {:.2}% <= 5%; gaussian worst Frobenius = {worst_frob:.2e} <= 1e-8; {secs:.1}s <= 60s",
            100.0 * worst_rel
        ),
    );
}

fn permutation_minimum(cost: &[f64], n: usize) -> f64 {
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum() };
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

#[test]
fn c08_unequal_dimensions_ellipse() {
    let run = run_shared("unequal_dim_ellipse", 7, |_| {});
    let e = &run.report.deterministic.metrics.extra;
    let rel = e["mean_dist_to_curve_rel"];
    let (up, lo) = (e["coverage_upper"], e["coverage_lower"]);
    let wall = run.report.wall_time_s;
    check(
        "C8 unequal dimensions",
        rel <= 0.05 && up >= 0.05 && lo >= 0.05 && wall <= 300.0,
        format!(
            "mean dist / semi-major = {rel:.4} <= 0.05, gap-side coverage = {up:.3}/{lo:.3} (both >= 0.05), wall = {wall:.1}s <= 300s"
        ),
    );
    assert_oracle_sandwich("unequal_dim_ellipse", &run);
}

#[test]
fn c09_class_preserving_map() {
    let run = run_shared("class_mixture", 7, |_| {});
    let acc = run.report.deterministic.metrics.class_accuracy.unwrap();
    let wall = run.report.wall_time_s;
    check(
        "C9 class preservation",
        acc >= 0.95 && wall <= 300.0,
        format!("nearest-component accuracy = {acc:.4} >= 0.95, wall = {wall:.1}s <= 300s"),
    );
}

#[test]
fn c10_population_transport() {
    let data_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let run = run_shared("population", 7, |raw| {
        raw.land_csv = Some(data_dir.join("land_synthetic.csv"));
        raw.population_csv = Some(data_dir.join("population_synthetic.csv"));
    });
    let e = &run.report.deterministic.metrics.extra;
    let land_frac = e["tau_land_fraction"];
    let cost_tau = e["geodesic_cost_tau"];
    let cost_rand = e["geodesic_cost_random_anchor"];
    let wall = run.report.wall_time_s;
    check(
        "C10 population transport",
        land_frac == 1.0 && cost_tau <= cost_rand && wall <= 1800.0,
        format!(
            "tau land fraction = {land_frac} (need 1.0), geodesic cost {cost_tau:.4} <= random-anchor baseline {cost_rand:.4}, wall = {wall:.1}s <= 1800s"
        ),
    );
    assert_oracle_sandwich("population", &run);
}

#[test]
fn c11_invariant_suites() {
    let t0 = Instant::now();

    // nn gradients against central finite differences.
    let mut nn_ok = true;
    {
        use monge_core::nn::{backward, forward, init_params, Activation, Mode, NetworkSpec};
        let mut gen = stream_rng(55, 0);
        for trial in 0..20 {
            let spec = NetworkSpec {
                input_dim: 1 + trial % 4,
                output_dim: 1 + (trial / 2) % 3,
                hidden_dims: vec![1 + trial % 6],
                activation: [Activation::PRelu, Activation::Tanh, Activation::Relu][trial % 3],
                residual: false,
                dropout_p: 0.0,
                condition_dim: 0,
            };
            let params = init_params(&spec, trial as u64).unwrap();
            let input = Tensor::matrix(
                2,
                spec.input_dim,
                (0..2 * spec.input_dim).map(|_| gen.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let upstream = Tensor::matrix(
                2,
                spec.output_dim,
                (0..2 * spec.output_dim).map(|_| gen.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let (pg, _) = backward(&spec, &params, &input, Mode::Eval, &upstream).unwrap();
            let h = 1e-5;
            for pi in (0..params.len()).step_by(3) {
                let mut plus = params.clone();
                plus.values_mut()[pi] += h;
                let mut minus = params.clone();
                minus.values_mut()[pi] -= h;
                let lp: f64 = forward(&spec, &plus, &input, Mode::Eval)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(&o, &u)| o * u)
                    .sum();
                let lm: f64 = forward(&spec, &minus, &input, Mode::Eval)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(&o, &u)| o * u)
                    .sum();
                let fd = (lp - lm) / (2.0 * h);
                nn_ok &= (pg[pi] - fd).abs() <= 1e-4 * pg[pi].abs().max(fd.abs()).max(1.0) + 1e-7;
            }
        }
    }

    // Cost gradients, symmetry and bounds.
    let mut cost_ok = true;
    {
        use monge_core::costs::CostKind;
        let mut gen = stream_rng(56, 0);
        let quad = CostSpec::quadratic(3);
        let lin = CostSpec::new(CostKind::SphereLinearized, (2, 2)).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| gen.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| gen.gen_range(-2.0..2.0)).collect();
            let g = quad.grad_y(&x, &y, None).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                let mut yp = y.clone();
                yp[i] += h;
                let mut ym = y.clone();
                ym[i] -= h;
                let fd = (quad.eval(&x, &yp, None).unwrap() - quad.eval(&x, &ym, None).unwrap())
                    / (2.0 * h);
                cost_ok &= (g[i] - fd).abs() <= 1e-6 * g[i].abs().max(1.0) + 1e-8;
            }
            cost_ok &= quad.eval(&x, &y, None).unwrap() >= 0.0;
            cost_ok &= (quad.eval(&x, &y, None).unwrap() - quad.eval(&y, &x, None).unwrap()).abs()
                < 1e-12;
            let s1 = [gen.gen_range(0.0..std::f64::consts::TAU), gen.gen_range(0.0..std::f64::consts::PI)];
            let s2 = [gen.gen_range(0.0..std::f64::consts::TAU), gen.gen_range(0.0..std::f64::consts::PI)];
            let v = lin.eval(&s1, &s2, None).unwrap();
            cost_ok &= (std::f64::consts::FRAC_PI_2 - 1.0 - 1e-12..=std::f64::consts::FRAC_PI_2 + 1.0 + 1e-12).contains(&v);
        }
    }

    // c-transform dominance and weak duality with a random potential.
    let mut dual_ok = true;
    {
        use monge_core::duality::{c_transform_minus, gap_e2, AscentInit, CTransformConfig};
        use monge_core::nn::{init_params, Activation, NetFn, NetworkSpec};
        let mut gen = stream_rng(57, 0);
        let pot_spec = NetworkSpec::mlp(2, 1, &[8], Activation::Tanh);
        let pot = init_params(&pot_spec, 3).unwrap();
        let f = NetFn::new(&pot_spec, &pot);
        let quad = CostSpec::quadratic(2);
        let n = 64;
        let x = Tensor::matrix(n, 2, (0..2 * n).map(|_| gen.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = Tensor::matrix(n, 2, (0..2 * n).map(|_| gen.gen_range(0.0..2.0)).collect()).unwrap();
        let cfg = CTransformConfig {
            ascent_steps: 30,
            ascent_lr: 0.25,
            restarts: 2,
            init: AscentInit::FromTargetSamples,
        };
        // Dominance: the transform value covers every candidate.
        for k in (0..n).step_by(7) {
            let (val, _) = c_transform_minus(f, &quad, x.row(k), &cfg, &y, None).unwrap();
            for j in 0..n {
                let psi = f.scalar(y.row(j)).unwrap() - quad.eval(x.row(k), y.row(j), None).unwrap();
                dual_ok &= val >= psi - 1e-12;
            }
        }
        // Weak duality: E2 >= 0 against the exact oracle.
        let oracle = discrete_ot_exact(&x, &y, &quad).unwrap().cost;
        let e2 = gap_e2(f, &quad, &x, &y, oracle, &cfg).unwrap();
        dual_ok &= e2 >= -1e-9;
    }

    // tau idempotence on a synthetic land set.
    let mut tau_ok = true;
    {
        use monge_core::geo::{tau, LandSet, SpherePoint};
        let pts: Vec<SpherePoint> = (0..100)
            .map(|i| SpherePoint::new(1.0 + 0.03 * (i % 10) as f64, 1.0 + 0.03 * (i / 10) as f64).unwrap())
            .collect();
        let land = LandSet::from_points(pts, 30, 5).unwrap();
        let mut gen = stream_rng(58, 0);
        for _ in 0..100 {
            let p = SpherePoint::new(gen.gen_range(0.0..std::f64::consts::TAU), gen.gen_range(0.0..std::f64::consts::PI)).unwrap();
            let is_land = |q: &SpherePoint| land.is_land(q);
            let once = tau(&p, &land, is_land);
            let twice = tau(&once, &land, is_land);
            tau_ok &= once == twice && land.is_land(&once);
        }
    }

    let secs = t0.elapsed().as_secs_f64();
    check(
        "C11 invariant suites",
        nn_ok && cost_ok && dual_ok && tau_ok && secs <= 180.0,
        format!(
            "nn FD: {nn_ok}, cost suite: {cost_ok}, c-transform/duality: {dual_ok}, tau: {tau_ok}, {secs:.1}s <= 180s"
        ),
    );
}
