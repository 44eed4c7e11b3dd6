use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rfens_cli::config::{load_json, ModelSpec, SweepConfig};
use rfens_cli::corpus::regenerate_goldens;
use rfens_cli::density::confidence_density_csv;
use rfens_cli::exit;
use rfens_cli::simulate::{run_simulate, simulate_header, simulate_row};
use rfens_cli::sweep::{run_sweep, solve_report, sweep_header, sweep_row, write_table};
use rfens_core::solver::SolveOptions;
use rfens_core::Error;

#[derive(Parser)]
#[command(name = "rfens", version, about = "Asymptotic theory and simulations of random-feature ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solver tolerance, overriding the configuration.
    #[arg(long)]
    tol: Option<f64>,
    /// Solver damping, overriding the configuration.
    #[arg(long)]
    damping: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one model and print the fixed point as JSON.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Solve along a sweep axis and write a CSV table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Sweep with finite-size experiments at every grid point.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Master seed, overriding the simulate block.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Joint density of two learners' logistic confidence scores.
    ConfidenceDensity {
        #[command(flatten)]
        common: Common,
        /// Cells per axis of the unit square.
        #[arg(long, default_value_t = 100)]
        resolution: usize,
    },
    /// Re-run the golden corpus and report deviations.
    Goldens {
        /// Directory of golden records.
        #[arg(long)]
        corpus: PathBuf,
        /// Rewrite stored values and hashes.
        #[arg(long)]
        write: bool,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

/// Error with its exit code.
struct Failure(i32, String);

impl Failure {
    fn from_error(e: Error, runtime_code: i32) -> Self {
        let code = match e {
            Error::Config(_) | Error::Json(_) => exit::CONFIG,
            Error::Io(_) => exit::FAILURE,
            _ => runtime_code,
        };
        Failure(code, e.to_string())
    }
}

type Outcome = Result<i32, Failure>;

fn options(common: &Common, settings: &rfens_cli::config::SolverSettings) -> SolveOptions {
    let mut o = settings.options();
    if let Some(t) = common.tol {
        o.tol = t;
    }
    if let Some(d) = common.damping {
        o.damping = d;
    }
    o
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    let res = match out {
        Some(p) => std::fs::write(p, bytes),
        None => std::io::stdout().write_all(bytes),
    };
    res.map_err(|e| Failure(exit::FAILURE, format!("cannot write output: {e}")))
}

fn config_err(e: Error) -> Failure {
    Failure::from_error(e, exit::CONFIG)
}

fn solve(common: &Common) -> Outcome {
    let spec: ModelSpec = load_json(&common.config).map_err(config_err)?;
    spec.resolve().map_err(config_err)?;
    let opts = options(common, &spec.solver);
    opts.validate().map_err(config_err)?;
    let (fp, report) = solve_report(&spec, &opts).map_err(|e| Failure::from_error(e, exit::CONVERGENCE))?;
    let text = serde_json::to_string_pretty(&report).expect("plain data") + "\n";
    emit(common.out.as_deref(), text.as_bytes())?;
    if fp.converged {
        Ok(exit::OK)
    } else {
        eprintln!("solver did not converge: {} after {} iterations", fp.status.as_str(), fp.iterations);
        Ok(exit::CONVERGENCE)
    }
}

fn sweep_config(common: &Common) -> Result<(SweepConfig, SolveOptions, Option<PathBuf>), Failure> {
    let cfg: SweepConfig = load_json(&common.config).map_err(config_err)?;
    cfg.validate().map_err(config_err)?;
    let opts = options(common, &cfg.base.solver);
    opts.validate().map_err(config_err)?;
    let out = common.out.clone().or_else(|| cfg.output.clone());
    Ok((cfg, opts, out))
}

fn table_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write_table(&mut buf, header, rows).map_err(|e| Failure(exit::FAILURE, e.to_string()))?;
    Ok(buf)
}

fn sweep(common: &Common, jobs: usize) -> Outcome {
    let (cfg, opts, out) = sweep_config(common)?;
    let points = run_sweep(&cfg, &opts, jobs).map_err(|e| Failure::from_error(e, exit::CONVERGENCE))?;
    let rows: Vec<Vec<String>> = points.iter().map(|p| sweep_row(&cfg, p)).collect();
    emit(out.as_deref(), &table_bytes(&sweep_header(&cfg), &rows)?)?;
    let failed = points.iter().filter(|p| !p.converged()).count();
    if failed > 0 {
        eprintln!("{failed} of {} grid points did not converge", points.len());
        return Ok(exit::CONVERGENCE);
    }
    Ok(exit::OK)
}

fn simulate(common: &Common, jobs: usize, seed: Option<u64>) -> Outcome {
    let (mut cfg, opts, out) = sweep_config(common)?;
    if let (Some(s), Some(block)) = (seed, cfg.simulate.as_mut()) {
        block.seed = s;
    }
    let (theory, sims) = run_simulate(&cfg, &opts, jobs).map_err(|e| Failure::from_error(e, exit::SIMULATION))?;
    let unconverged = theory.iter().filter(|p| !p.converged()).count();
    let Some(sims) = sims else {
        let rows: Vec<Vec<String>> = theory.iter().map(|p| sweep_row(&cfg, p)).collect();
        emit(out.as_deref(), &table_bytes(&sweep_header(&cfg), &rows)?)?;
        return Ok(if unconverged > 0 { exit::CONVERGENCE } else { exit::OK });
    };
    let rows: Vec<Vec<String>> = sims.iter().map(|p| simulate_row(&cfg, p)).collect();
    emit(out.as_deref(), &table_bytes(&simulate_header(&cfg), &rows)?)?;
    let failed: Vec<String> = sims
        .iter()
        .filter(|p| p.failures() > 0)
        .map(|p| match &p.experiment {
            Ok(r) => format!("{}: {} failed trials", p.theory.value, r.failures),
            Err(e) => format!("{}: {e}", p.theory.value),
        })
        .collect();
    if !failed.is_empty() {
        eprintln!("simulation failures at {}", failed.join(", "));
        return Ok(exit::SIMULATION);
    }
    Ok(if unconverged > 0 { exit::CONVERGENCE } else { exit::OK })
}

fn density(common: &Common, resolution: usize) -> Outcome {
    let spec: ModelSpec = load_json(&common.config).map_err(config_err)?;
    spec.resolve().map_err(config_err)?;
    let opts = options(common, &spec.solver);
    opts.validate().map_err(config_err)?;
    let (_, text) =
        confidence_density_csv(&spec, &opts, resolution).map_err(|e| Failure::from_error(e, exit::CONVERGENCE))?;
    emit(common.out.as_deref(), text.as_bytes())?;
    Ok(exit::OK)
}

fn goldens(corpus: &Path, write: bool, jobs: usize) -> Outcome {
    let reports = regenerate_goldens(corpus, write, jobs).map_err(config_err)?;
    let mut failed = 0;
    for r in &reports {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.message);
        failed += usize::from(!r.passed);
    }
    println!("{} of {} records passed", reports.len() - failed, reports.len());
    Ok(if failed > 0 { exit::CONVERGENCE } else { exit::OK })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve { common } => solve(common),
        Command::Sweep { common, jobs } => sweep(common, *jobs),
        Command::Simulate { common, jobs, seed } => simulate(common, *jobs, *seed),
        Command::ConfidenceDensity { common, resolution } => density(common, *resolution),
        Command::Goldens { corpus, write, jobs } => goldens(corpus, *write, *jobs),
    };
    let code = outcome.unwrap_or_else(|Failure(code, msg)| {
        eprintln!("error: {msg}");
        code
    });
    ExitCode::from(code as u8)
}
