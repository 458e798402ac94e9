//! The `glaeser` binary: decide whether a linear system with semialgebraic
//! coefficients admits a continuous solution on a compact domain, construct
//! one, trace the fiber refinement, or verify a stored solution.

#![forbid(unsafe_code)]

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::exit;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use glaeser_cli::{
    load_problem, run_check, run_refine, run_solve, run_verify, write_json, CliError, Flags,
};

/// Continuous solvability of linear systems with semialgebraic coefficients.
///
/// Exit codes: 0 solvable / verified, 2 unsolvable / verification failed,
/// 3 section construction gave up, 1 usage or input errors.
#[derive(Parser)]
#[command(name = "glaeser", version)]
struct Cli {
    /// Worker threads for the numeric sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Problem description (JSON).
    file: PathBuf,
    /// Grid level; the pitch is the longest box side divided by 2^level
    /// (default 5, or the problem file's `params.level`).
    #[arg(long)]
    level: Option<u32>,
    /// Residual tolerance for the `verify` verdict (default 1e-6).
    #[arg(long)]
    tol: Option<f64>,
    /// Fixed jump threshold for the discontinuity locus during section
    /// construction (default: automatic, per field).
    #[arg(long)]
    theta: Option<f64>,
}

impl Common {
    fn flags(&self) -> Flags {
        Flags {
            level: self.level,
            tol: self.tol,
            theta: self.theta,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Decide continuous solvability on the sampled domain.
    Check {
        #[command(flatten)]
        common: Common,
        /// Write the run summary as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide solvability and write a continuous solution as CSV
    /// (plus a `<out>.json` metadata sidecar).
    Solve {
        #[command(flatten)]
        common: Common,
        /// Section CSV path (default: problem file with `.section.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump every refinement sweep as JSON lines, one record per sample,
    /// starting with the unrefined bundle as iteration 0.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Trace file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the residuals and continuity profile of a stored section.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Section CSV produced by `solve`.
        section: PathBuf,
        /// Write the verification report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            exit(code);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("warning: could not configure the thread pool: {e}");
    }
    match run(cli.cmd) {
        Ok(code) => exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            exit(err.exit_code());
        }
    }
}

fn run(cmd: Cmd) -> Result<i32, CliError> {
    match cmd {
        Cmd::Check { common, out } => {
            let problem = load_problem(&common.file)?;
            let (result, _) = run_check(&problem, &common.flags())?;
            if let Some(path) = &out {
                write_json(path, &result)?;
            }
            match &result.witness {
                None => {
                    println!(
                        "solvable: no empty stable fiber over {} samples ({} refinement sweeps)",
                        result.samples, result.iterations
                    );
                    Ok(0)
                }
                Some(w) => {
                    println!(
                        "unsolvable: empty stable fiber at {w:?} ({} refinement sweeps)",
                        result.iterations
                    );
                    Ok(2)
                }
            }
        }
        Cmd::Solve { common, out } => {
            let problem = load_problem(&common.file)?;
            let out = out.unwrap_or_else(|| common.file.with_extension("section.csv"));
            let result = run_solve(&problem, &common.flags(), &out)?;
            let res = result.residual.as_ref().expect("solve reports residuals");
            println!(
                "solvable: wrote {} samples to {} (max residual {:.3e}, {} refinement sweeps)",
                result.samples,
                out.display(),
                res.max_residual,
                result.iterations
            );
            Ok(0)
        }
        Cmd::Refine { common, out } => {
            let problem = load_problem(&common.file)?;
            let iterations = match &out {
                Some(path) => {
                    let file = File::create(path).map_err(|source| CliError::Write {
                        path: path.clone(),
                        source,
                    })?;
                    let mut sink = BufWriter::new(file);
                    let iterations = run_refine(&problem, &common.flags(), &mut sink)?;
                    sink.flush().map_err(|source| CliError::Write {
                        path: path.clone(),
                        source,
                    })?;
                    iterations
                }
                None => {
                    let stdout = io::stdout();
                    let mut sink = stdout.lock();
                    run_refine(&problem, &common.flags(), &mut sink)?
                }
            };
            eprintln!("refinement settled after {iterations} sweep(s)");
            Ok(0)
        }
        Cmd::Verify {
            common,
            section,
            out,
        } => {
            let problem = load_problem(&common.file)?;
            let outcome = run_verify(&problem, &section, &common.flags(), out.as_deref())?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let r = &outcome.report;
            println!(
                "max residual {:.3e} (tolerance {:.3e}), residual drift {:.3e}, oscillation over radii {:?}: {:?}",
                r.max_residual, r.tol, r.residual_drift, r.continuity.radii, r.continuity.max_oscillation
            );
            if outcome.ok {
                println!("verified");
                Ok(0)
            } else {
                println!("verification FAILED: residual above tolerance");
                Ok(2)
            }
        }
    }
}
