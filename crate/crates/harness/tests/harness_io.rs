//! End-to-end harness behavior: byte-identical reports for identical
//! configs, artifact round-trips through the harness's own readers, the
//! divergence exit path, and the CLI subcommand surfaces.

use std::path::Path;
use std::process::Command;

use monge_forge::config::RawConfig;
use monge_forge::csvio::read_matrix_csv;
use monge_forge::experiments::{run_experiment, FailureKind};
use monge_forge::report::ExperimentReport;

fn tiny_config(dir: &Path, seed: u64) -> RawConfig {
    let mut raw = RawConfig::for_experiment("line1d");
    raw.seed = Some(seed);
    raw.output_dir = Some(dir.to_path_buf());
    raw.outer_steps = Some(40);
    raw.map_steps = Some(3);
    raw.potential_steps = Some(2);
    raw.batch_size = Some(64);
    raw.eval_every = Some(10);
    raw.eval_batch = Some(128);
    raw.n_test = Some(96);
    raw
}

#[test]
fn identical_configs_give_byte_identical_deterministic_sections() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = run_experiment(&tiny_config(dir_a.path(), 5)).unwrap();
    let b = run_experiment(&tiny_config(dir_b.path(), 5)).unwrap();
    assert_eq!(a.deterministic_json(), b.deterministic_json());
    // Duality off means no duality report in the output.
    assert!(a.deterministic.metrics.duality.is_none());

    let c = run_experiment(&tiny_config(dir_a.path(), 6)).unwrap();
    assert_ne!(a.deterministic_json(), c.deterministic_json());
}

#[test]
fn artifacts_parse_back_through_harness_readers() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&tiny_config(dir.path(), 3)).unwrap();

    // Every emitted CSV reads back.
    for name in ["source.csv", "target.csv", "pushforward.csv"] {
        let (header, data) = read_matrix_csv(dir.path().join(name)).unwrap();
        assert!(!header.is_empty());
        assert!(data.rows() > 0);
    }
    let hist_text = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let hist = monge_core::solver::TrainHistory::read_csv(&hist_text).unwrap();
    assert_eq!(
        hist.final_record().unwrap(),
        report.deterministic.final_history.as_ref().unwrap()
    );

    // Report JSON round-trips.
    let loaded = ExperimentReport::read(dir.path().join("report.json")).unwrap();
    assert_eq!(loaded.deterministic_json(), report.deterministic_json());

    // Checkpoint reloads and reproduces the pushforward dump.
    let (map, potential) =
        monge_core::solver::load_checkpoint(dir.path().join("checkpoint.bin")).unwrap();
    assert!(potential.is_some());
    let (_, source) = read_matrix_csv(dir.path().join("source.csv")).unwrap();
    let (_, pushed_dump) = read_matrix_csv(dir.path().join("pushforward.csv")).unwrap();
    let pushed = map.apply(&source, None).unwrap();
    for (a, b) in pushed.data().iter().zip(pushed_dump.data()) {
        assert_eq!(a.to_bits(), b.to_bits(), "checkpoint must reproduce the dump exactly");
    }
}

#[test]
fn divergence_produces_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = tiny_config(dir.path(), 2);
    raw.divergence_ceiling = Some(1e-9);
    let err = run_experiment(&raw).unwrap_err();
    assert_eq!(err.kind, FailureKind::Divergence);
    let report = ExperimentReport::read(dir.path().join("report.json")).unwrap();
    assert_eq!(report.deterministic.status, "diverged");
}

#[test]
fn population_requires_land_csv() {
    let raw = RawConfig::for_experiment("population");
    let err = run_experiment(&raw).unwrap_err();
    assert!(err.message.contains("land_csv"), "got: {}", err.message);
}

#[test]
fn unknown_experiment_is_rejected() {
    let raw = RawConfig::for_experiment("not_a_thing");
    assert!(run_experiment(&raw).is_err());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_monge-forge"))
}

fn write_tiny_config_file(path: &Path, out_dir: &Path) {
    let text = format!(
        "experiment = \"line1d\"\nseed = 4\noutput_dir = \"{}\"\nouter_steps = 40\nmap_steps = 3\npotential_steps = 2\nbatch_size = 64\neval_every = 10\neval_batch = 128\nn_test = 96\n",
        out_dir.display()
    );
    std::fs::write(path, text).unwrap();
}

#[test]
fn cli_solve_gaps_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    let out_dir = dir.path().join("out");
    write_tiny_config_file(&config_path, &out_dir);

    let status = bin()
        .args(["solve", "--config"])
        .arg(&config_path)
        .output()
        .expect("solve runs");
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out_dir.join("checkpoint.bin").exists());

    let gaps_out = dir.path().join("gaps.json");
    let status = bin()
        .args(["gaps", "--checkpoint"])
        .arg(out_dir.join("checkpoint.bin"))
        .arg("--config")
        .arg(&config_path)
        .arg("--output")
        .arg(&gaps_out)
        .output()
        .expect("gaps runs");
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let gaps: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&gaps_out).unwrap()).unwrap();
    assert!(gaps["e1"].as_f64().unwrap() >= -1e-6);
    assert!(gaps["e2"].as_f64().is_some());
    assert!(gaps["bound"].as_f64().is_some());

    let compare_out = dir.path().join("compare.csv");
    let status = bin()
        .args(["compare", "--map-a"])
        .arg(out_dir.join("checkpoint.bin"))
        .arg("--map-b")
        .arg(out_dir.join("checkpoint.bin"))
        .arg("--config")
        .arg(&config_path)
        .arg("--output")
        .arg(&compare_out)
        .output()
        .expect("compare runs");
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let text = std::fs::read_to_string(&compare_out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    // Same checkpoint on both sides: identical numbers.
    let a: Vec<&str> = lines[1].splitn(2, ',').collect();
    let b: Vec<&str> = lines[2].splitn(2, ',').collect();
    assert_eq!(a[1], b[1]);
}

#[test]
fn cli_oracle_exact_and_entropic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.csv"), "x0\n0\n1\n").unwrap();
    std::fs::write(dir.path().join("y.csv"), "x0\n1\n2\n").unwrap();

    let out = bin()
        .args(["oracle", "--cost", "quadratic", "--x"])
        .arg(dir.path().join("x.csv"))
        .arg("--y")
        .arg(dir.path().join("y.csv"))
        .arg("--output")
        .arg(dir.path().join("coupling"))
        .output()
        .expect("oracle runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let cost_line = stdout.lines().next().unwrap();
    let cost: f64 = cost_line.trim_start_matches("cost: ").parse().unwrap();
    assert!((cost - 1.0).abs() < 1e-9, "exact 2-point instance costs 1, got {cost}");
    assert!(dir.path().join("coupling/coupling.csv").exists());
    assert!(dir.path().join("coupling/coupling.json").exists());

    let out = bin()
        .args(["oracle", "--cost", "quadratic", "--epsilon", "0.05", "--iters", "3000", "--x"])
        .arg(dir.path().join("x.csv"))
        .arg("--y")
        .arg(dir.path().join("y.csv"))
        .output()
        .expect("oracle sinkhorn runs");
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let cost: f64 = stdout
        .lines()
        .next()
        .unwrap()
        .trim_start_matches("cost: ")
        .parse()
        .unwrap();
    assert!((cost - 1.0).abs() < 0.1, "entropic cost near 1, got {cost}");
}

#[test]
fn identity_map_loses_to_trained_map_by_the_mean_shift() {
    // On the shifted-Gaussian problem the identity map's pushforward
    // fidelity exceeds a trained map's by at least |m|^2 / 2.
    use monge_core::costs::CostSpec;
    use monge_core::nn::{Activation, NetworkSpec, ParamVector};
    use monge_core::rng::mix;
    use monge_forge::compare::compare_maps;
    use monge_forge::experiments::build_setup;

    let dir = tempfile::tempdir().unwrap();
    let mut raw = RawConfig::for_experiment("gaussian2d");
    raw.seed = Some(11);
    raw.output_dir = Some(dir.path().to_path_buf());
    raw.outer_steps = Some(400);
    raw.batch_size = Some(128);
    raw.eval_batch = Some(256);
    raw.n_test = Some(512);
    raw.duality = Some(false);
    raw.checkpoint_every = Some(0);
    run_experiment(&raw).unwrap();
    let (trained, _) =
        monge_core::solver::load_checkpoint(dir.path().join("checkpoint.bin")).unwrap();

    let identity_spec = NetworkSpec::residual(2, &[4], Activation::PRelu);
    let identity = monge_core::solver::TrainedMap {
        params: ParamVector::zeros(identity_spec.param_len()),
        spec: identity_spec,
        ema_params: None,
        pad_to: None,
        composite_mask: None,
        conditional: false,
    };

    let setup = build_setup(&raw).unwrap();
    let x = setup.source.sample(512, mix(11, 0xc0));
    let y = setup.target.sample(512, mix(11, 0xc1));
    let cost = CostSpec::quadratic(2);
    let rows = compare_maps(
        ("identity", &identity),
        ("trained", &trained),
        &x,
        &y.points,
        &cost,
    )
    .unwrap();
    let mean_shift_sq = 2.0f64 * 2.0 + 1.0; // |m|^2 for m = (2, -1)
    assert!(
        rows[0].pushforward_fidelity >= rows[1].pushforward_fidelity + mean_shift_sq / 2.0,
        "identity fidelity {} should exceed trained fidelity {} by at least {}",
        rows[0].pushforward_fidelity,
        rows[1].pushforward_fidelity,
        mean_shift_sq / 2.0
    );
}

#[test]
fn cli_divergence_exit_code_is_2() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    let out_dir = dir.path().join("out");
    let text = format!(
        "experiment = \"line1d\"\nseed = 4\noutput_dir = \"{}\"\nouter_steps = 30\nmap_steps = 2\npotential_steps = 2\nbatch_size = 32\neval_every = 10\neval_batch = 64\ndivergence_ceiling = 1e-9\n",
        out_dir.display()
    );
    std::fs::write(&config_path, text).unwrap();
    let out = bin()
        .args(["solve", "--config"])
        .arg(&config_path)
        .output()
        .expect("solve runs");
    assert_eq!(out.status.code(), Some(2));
    assert!(out_dir.join("report.json").exists(), "partial report written");
}

#[test]
fn cli_missing_config_exit_code_is_3() {
    let out = bin()
        .args(["solve", "--config", "/nonexistent/nope.toml"])
        .output()
        .expect("solve runs");
    assert_eq!(out.status.code(), Some(3));
}
