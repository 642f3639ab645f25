//! Command-line front end: `popgame simulate|certify|verify <scenario.json>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use popgame::certify::Verdict;
use popgame::scenario::{
    run_certify, run_simulate, run_verify, to_json, write_trajectory_csv, Overrides, Scenario,
    DEFAULT_CSV_STRIDE,
};
use popgame::Error;

#[derive(Parser)]
#[command(name = "popgame", version, about = "Evolutionary game dynamics: simulation and stability certification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario JSON files; several scenarios run as a batch.
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the integration step.
    #[arg(long)]
    step: Option<f64>,
    /// Overrides the integration horizon.
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured loop and write a trajectory CSV + summary.
    Simulate(CommonArgs),
    /// Search for a stability certificate and write it as JSON.
    Certify(CommonArgs),
    /// Run the sampled dissipativity and soundness checks.
    Verify(CommonArgs),
}

const EXIT_OK: u8 = 0;
const EXIT_REFUTED_OR_VIOLATIONS: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_INCONCLUSIVE: u8 = 4;

fn error_exit(err: &Error) -> u8 {
    match err {
        Error::Scenario(_) | Error::Io(_) | Error::Json(_) | Error::InvalidParameter(_) => {
            EXIT_SCHEMA
        }
        _ => EXIT_NUMERICAL,
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

fn overrides(args: &CommonArgs) -> Overrides {
    Overrides {
        seed: args.seed,
        step: args.step,
        horizon: args.horizon,
    }
}

fn simulate_one(path: &Path, args: &CommonArgs) -> u8 {
    let scenario = match Scenario::from_path(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return EXIT_SCHEMA;
        }
    };
    match run_simulate(&scenario, overrides(args)) {
        Ok(outcome) => {
            let base = stem(path);
            let csv_path = args.out.join(format!("{base}_trajectory.csv"));
            let summary_path = args.out.join(format!("{base}_summary.json"));
            let write = || -> Result<(), Error> {
                let file = std::fs::File::create(&csv_path)?;
                write_trajectory_csv(&outcome.trajectory, DEFAULT_CSV_STRIDE, file)?;
                std::fs::write(&summary_path, to_json(&outcome.summary)?)?;
                Ok(())
            };
            if let Err(e) = write() {
                eprintln!("{}: {e}", path.display());
                return error_exit(&e);
            }
            println!(
                "{}: converged={} final_nash_gap={:.3e} lyapunov_violations={}",
                path.display(),
                outcome.summary.converged,
                outcome.summary.final_nash_gap,
                outcome.summary.lyapunov_violations
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            error_exit(&e)
        }
    }
}

fn certify_one(path: &Path, args: &CommonArgs) -> u8 {
    let scenario = match Scenario::from_path(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return EXIT_SCHEMA;
        }
    };
    match run_certify(&scenario, overrides(args)) {
        Ok(cert) => {
            let out_path = args.out.join(format!("{}_certificate.json", stem(path)));
            let write = || -> Result<(), Error> {
                std::fs::write(&out_path, to_json(&cert)?)?;
                Ok(())
            };
            if let Err(e) = write() {
                eprintln!("{}: {e}", path.display());
                return error_exit(&e);
            }
            println!(
                "{}: verdict={:?} lambda_max={:.3e}",
                path.display(),
                cert.verdict,
                cert.lambda_max
            );
            match cert.verdict {
                Verdict::Certified => EXIT_OK,
                Verdict::Refuted => EXIT_REFUTED_OR_VIOLATIONS,
                Verdict::Inconclusive => EXIT_INCONCLUSIVE,
            }
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            error_exit(&e)
        }
    }
}

fn verify_one(path: &Path, args: &CommonArgs) -> u8 {
    let scenario = match Scenario::from_path(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return EXIT_SCHEMA;
        }
    };
    match run_verify(&scenario, overrides(args)) {
        Ok(report) => {
            let out_path = args.out.join(format!("{}_verify.json", stem(path)));
            let write = || -> Result<(), Error> {
                std::fs::write(&out_path, to_json(&report)?)?;
                Ok(())
            };
            if let Err(e) = write() {
                eprintln!("{}: {e}", path.display());
                return error_exit(&e);
            }
            println!(
                "{}: total_violations={}",
                path.display(),
                report.total_violations
            );
            if report.total_violations == 0 {
                EXIT_OK
            } else {
                EXIT_REFUTED_OR_VIOLATIONS
            }
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            error_exit(&e)
        }
    }
}

fn batch_threads() -> usize {
    std::env::var("POPGAME_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn run_batch(args: &CommonArgs, runner: fn(&Path, &CommonArgs) -> u8) -> u8 {
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("cannot create output directory: {e}");
        return EXIT_SCHEMA;
    }
    if args.scenarios.len() == 1 {
        return runner(&args.scenarios[0], args);
    }
    let cap = batch_threads();
    let mut codes = Vec::with_capacity(args.scenarios.len());
    for chunk in args.scenarios.chunks(cap) {
        let results: Vec<u8> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|path| scope.spawn(move || runner(path, args)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or(EXIT_NUMERICAL))
                .collect()
        });
        codes.extend(results);
    }
    codes.into_iter().max().unwrap_or(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Simulate(args) => run_batch(args, simulate_one),
        Command::Certify(args) => run_batch(args, certify_one),
        Command::Verify(args) => run_batch(args, verify_one),
    };
    ExitCode::from(code)
}
