//! Command-line front end.
//!
//! Exit codes: 0 success, 2 training divergence (partial report written),
//! 3 I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use monge_core::costs::{CostKind, CostSpec};
use monge_core::duality::{duality_report, CTransformConfig};
use monge_core::nn::NetFn;
use monge_core::oracles::{discrete_ot_exact, sinkhorn};
use monge_core::rng::mix;
use monge_core::solver::load_checkpoint;

use monge_forge::compare::{compare_maps, rows_to_csv};
use monge_forge::config::load_config;
use monge_forge::csvio::read_matrix_csv;
use monge_forge::experiments::{build_setup, run_experiment, FailureKind};
use monge_forge::{effective_jobs, THREADS_ENV};

#[derive(Parser)]
#[command(name = "monge-forge", version, about = "Monge map estimation between sampled distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an experiment from a config file and write its report.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Runs this many seeds (seed, seed+1, ...) concurrently in
        /// isolated subdirectories; capped by MONGE_FORGE_THREADS.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Duality-gap report for a saved checkpoint on fresh test samples.
    Gaps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Write the JSON report here instead of stdout only.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact (or entropic) transport cost between two sample CSVs.
    Oracle {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// quadratic | inverse_square | neg_cosine | sphere_geodesic |
        /// sphere_linearized | masked_mse
        #[arg(long)]
        cost: String,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        mask_file: Option<PathBuf>,
        /// Use log-domain Sinkhorn with this regularization instead of the
        /// exact assignment solver.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        /// Directory for coupling.csv / coupling.json dumps.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Side-by-side comparison of two checkpoints on an experiment's test
    /// distribution.
    Compare {
        #[arg(long)]
        map_a: PathBuf,
        #[arg(long)]
        map_b: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(match e.kind {
                FailureKind::Divergence => 2,
                FailureKind::Io => 3,
                FailureKind::Other => 1,
            })
        }
    }
}

fn fail(kind: FailureKind, e: impl std::fmt::Display) -> monge_forge::RunFailure {
    monge_forge::RunFailure {
        kind,
        message: e.to_string(),
    }
}

fn other(e: impl std::fmt::Display) -> monge_forge::RunFailure {
    fail(FailureKind::Other, e)
}

fn io_err(e: impl std::fmt::Display) -> monge_forge::RunFailure {
    fail(FailureKind::Io, e)
}

fn dispatch(cli: Cli) -> Result<(), monge_forge::RunFailure> {
    match cli.command {
        Command::Solve {
            config,
            seed,
            output,
            jobs,
        } => {
            let mut raw = load_config(&config).map_err(io_err)?;
            if let Some(s) = seed {
                raw.seed = Some(s);
            }
            if let Some(o) = output {
                raw.output_dir = Some(o);
            }
            if jobs <= 1 {
                let report = run_experiment(&raw)?;
                println!("{}", report.to_json());
                return Ok(());
            }

            let jobs = effective_jobs(jobs).max(1);
            let base_seed = raw.seed.unwrap_or(0);
            let base_dir = raw
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("out").join(&raw.experiment));
            println!(
                "running {jobs} seeds concurrently (cap via {THREADS_ENV}) under {}",
                base_dir.display()
            );
            let results: Vec<(u64, Result<(), monge_forge::RunFailure>)> =
                std::thread::scope(|scope| {
                    let mut handles = Vec::new();
                    for j in 0..jobs {
                        let mut sub = raw.clone();
                        let run_seed = base_seed + j as u64;
                        sub.seed = Some(run_seed);
                        sub.output_dir = Some(base_dir.join(format!("seed_{run_seed}")));
                        handles.push(scope.spawn(move || {
                            (run_seed, run_experiment(&sub).map(|_| ()))
                        }));
                    }
                    handles.into_iter().map(|h| h.join().unwrap()).collect()
                });
            let mut failure: Option<monge_forge::RunFailure> = None;
            for (run_seed, result) in results {
                match result {
                    Ok(()) => println!("seed {run_seed}: ok"),
                    Err(e) => {
                        println!("seed {run_seed}: failed ({})", e.message);
                        failure.get_or_insert(e);
                    }
                }
            }
            match failure {
                Some(e) => Err(e),
                None => Ok(()),
            }
        }

        Command::Gaps {
            checkpoint,
            config,
            output,
        } => {
            let raw = load_config(&config).map_err(io_err)?;
            let setup = build_setup(&raw).map_err(other)?;
            let (map, potential) = load_checkpoint(&checkpoint).map_err(io_err)?;
            let (pot_spec, pot_params) = potential.ok_or_else(|| {
                other("checkpoint has no potential network; gaps need both T and f")
            })?;
            let n = setup.n_test.min(512);
            let seed = setup.train.seed;
            let x = setup.source.sample(n, mix(seed, 0x7e57_0001));
            let y = setup.target.sample(n, mix(seed, 0x7e57_0002));
            let report = duality_report(
                &map,
                NetFn::new(&pot_spec, &pot_params),
                &setup.cost,
                &x.points,
                &y.points,
                &CTransformConfig::default(),
            )
            .map_err(other)?;
            let json = report.to_json();
            println!("{json}");
            if let Some(path) = output {
                std::fs::write(path, json).map_err(io_err)?;
            }
            Ok(())
        }

        Command::Oracle {
            x,
            y,
            cost,
            scale,
            alpha,
            radius,
            mask_file,
            epsilon,
            iters,
            output,
        } => {
            let (_, xs) = read_matrix_csv(&x).map_err(io_err)?;
            let (_, ys) = read_matrix_csv(&y).map_err(io_err)?;
            let dims = (xs.cols(), ys.cols());
            let kind = match cost.as_str() {
                "quadratic" => CostKind::Quadratic {
                    scale: scale.unwrap_or(1.0),
                },
                "inverse_square" => CostKind::InverseSquare,
                "neg_cosine" => CostKind::NegCosine,
                "sphere_geodesic" => CostKind::SphereGeodesic {
                    radius: radius.unwrap_or(1.0),
                },
                "sphere_linearized" => CostKind::SphereLinearized,
                "masked_mse" => {
                    let path = mask_file
                        .ok_or_else(|| other("masked_mse needs --mask-file"))?;
                    let text = std::fs::read_to_string(path).map_err(io_err)?;
                    let mask: Result<Vec<f64>, _> = text
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(str::parse::<f64>)
                        .collect();
                    CostKind::MaskedMse {
                        mask: mask.map_err(other)?,
                        alpha: alpha.unwrap_or(1.0),
                    }
                }
                otherkind => return Err(other(format!("unknown cost `{otherkind}`"))),
            };
            let spec = CostSpec::new(kind, dims).map_err(other)?;
            let coupling = match epsilon {
                Some(eps) => sinkhorn(&xs, &ys, &spec, eps, iters).map_err(other)?,
                None => discrete_ot_exact(&xs, &ys, &spec).map_err(other)?,
            };
            println!("cost: {}", coupling.cost);
            println!("{}", coupling.header_json());
            if let Some(dir) = output {
                std::fs::create_dir_all(&dir).map_err(io_err)?;
                std::fs::write(dir.join("coupling.csv"), coupling.to_csv_string())
                    .map_err(io_err)?;
                std::fs::write(dir.join("coupling.json"), coupling.header_json())
                    .map_err(io_err)?;
            }
            Ok(())
        }

        Command::Compare {
            map_a,
            map_b,
            config,
            output,
        } => {
            let raw = load_config(&config).map_err(io_err)?;
            let setup = build_setup(&raw).map_err(other)?;
            let (a, _) = load_checkpoint(&map_a).map_err(io_err)?;
            let (b, _) = load_checkpoint(&map_b).map_err(io_err)?;
            let seed = setup.train.seed;
            let x = setup.source.sample(setup.n_test, mix(seed, 0x7e57_0001));
            let y = setup.target.sample(setup.n_test, mix(seed, 0x7e57_0002));
            let rows = compare_maps(
                (
                    map_a.file_stem().and_then(|s| s.to_str()).unwrap_or("map_a"),
                    &a,
                ),
                (
                    map_b.file_stem().and_then(|s| s.to_str()).unwrap_or("map_b"),
                    &b,
                ),
                &x,
                &y.points,
                &setup.cost,
            )
            .map_err(other)?;
            let csv = rows_to_csv(&rows);
            print!("{csv}");
            if let Some(path) = output {
                std::fs::write(path, csv).map_err(io_err)?;
            }
            Ok(())
        }
    }
}
