//! `persuade`: solve, realize and check optimal signaling menus.

mod output;
mod problem_file;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use persuasion_core::error::Error as CoreError;
use persuasion_core::laminar::construct_mechanism;
use persuasion_core::lp::LpError;
use persuasion_core::reduced_form::{self, SolveMode};
use persuasion_core::verify::{self, audit_mechanism, ic_report, monte_carlo_audit, oracle_discrete};
use serde::Serialize;

use output::{write_json, write_text, MechanismDoc, SolutionDoc};
use problem_file::{read_json, ProblemFile, VERSION};

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_ASSERTION: u8 = 3;

#[derive(Parser)]
#[command(name = "persuade", version, about = "Optimal signaling menus for a privately informed receiver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, env = "PERSUADE_OUT", default_value = ".")]
    out: PathBuf,
    /// Cutting-plane tolerance (overrides the problem file).
    #[arg(long)]
    tol: Option<f64>,
    /// Solve for a single public signal.
    #[arg(long, conflicts_with = "no_ic")]
    public: bool,
    /// Drop incentive compatibility (an upper bound on the private value).
    #[arg(long)]
    no_ic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the menu program; writes solution.json.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Solve (or load a solution) and build the interval partitions; writes
    /// solution.json, mechanism.json and mechanism.csv.
    Partition {
        problem: PathBuf,
        /// Use this solution instead of solving.
        #[arg(long)]
        solution: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Audit a mechanism against its solution; writes verify.json and exits
    /// with status 3 if a check fails.
    Verify {
        problem: PathBuf,
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// Monte Carlo replay with this many samples.
        #[arg(long)]
        mc: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "PERSUADE_OUT", default_value = ".")]
        out: PathBuf,
    },
    /// Brute-force LP on a discretized state space; writes oracle.json.
    Oracle {
        problem: PathBuf,
        #[arg(long, default_value_t = 2000)]
        bins: usize,
        /// Report the gap to this solution's objective.
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long, env = "PERSUADE_OUT", default_value = ".")]
        out: PathBuf,
    },
    /// Reproduce a built-in example and print its check table.
    Demo {
        #[arg(value_enum)]
        example: Example,
        /// Number of types for public-private.
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, env = "PERSUADE_OUT", default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    Buyer,
    PublicPrivate,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    AssertionFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::AssertionFailed) => ExitCode::from(EXIT_ASSERTION),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<CoreError>() {
        Some(CoreError::InfeasibleParticipation { .. })
        | Some(CoreError::Infeasible(_))
        | Some(CoreError::Lp(LpError::Infeasible)) => EXIT_INFEASIBLE,
        Some(CoreError::NotConverged { .. }) => EXIT_ASSERTION,
        _ => EXIT_USAGE,
    }
}

fn mode(common: &Common) -> SolveMode {
    if common.public {
        SolveMode::Public
    } else if common.no_ic {
        SolveMode::NoIc
    } else {
        SolveMode::Private
    }
}

fn solve_file(path: &Path, common: &Common) -> Result<(persuasion_core::model::Problem, reduced_form::MenuSolution)> {
    let file = ProblemFile::load(path)?;
    let problem = file.to_problem()?;
    let mut config = file.solver_config();
    if let Some(tol) = common.tol {
        config.cut_tol = tol;
    }
    match reduced_form::solve(&problem, &config, mode(common)) {
        Ok(sol) => Ok((problem, sol)),
        Err(CoreError::NotConverged { rounds, violation, incumbent }) => {
            let doc = SolutionDoc::new(&problem, &incumbent)?;
            let dest = common.out.join("incumbent.json");
            write_json(&dest, &doc)?;
            eprintln!("incumbent written to {}", dest.display());
            Err(CoreError::NotConverged { rounds, violation, incumbent }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn run(command: Command) -> Result<Status> {
    match command {
        Command::Solve { problem, common } => {
            let (p, sol) = solve_file(&problem, &common)?;
            let doc = SolutionDoc::new(&p, &sol)?;
            write_json(&common.out.join("solution.json"), &doc)?;
            println!("objective {:.12}", sol.objective);
            for t in &doc.types {
                let atoms: Vec<String> = t.atoms.iter().map(|a| format!("{}@{:.6} (p {:.6})", a.label, a.mean, a.p)).collect();
                println!("  {}: {}", t.label, atoms.join(", "));
            }
            Ok(Status::Ok)
        }
        Command::Partition { problem, solution, common } => {
            let (p, sol) = match solution {
                Some(path) => {
                    let p = ProblemFile::load(&problem)?.to_problem()?;
                    let doc: SolutionDoc = read_json(&path)?;
                    let sol = doc.to_solution(&p)?;
                    (p, sol)
                }
                None => solve_file(&problem, &common)?,
            };
            let mech = construct_mechanism(&p, &sol)?;
            write_json(&common.out.join("solution.json"), &SolutionDoc::new(&p, &sol)?)?;
            write_json(
                &common.out.join("mechanism.json"),
                &MechanismDoc { version: VERSION, mechanism: mech.clone() },
            )?;
            write_text(&common.out.join("mechanism.csv"), &mech.to_csv(&p))?;
            let messages: usize = mech.types.iter().map(|t| t.messages.len()).sum();
            println!("{messages} messages over {} types written to {}", mech.types.len(), common.out.display());
            Ok(Status::Ok)
        }
        Command::Verify { problem, mechanism, solution, mc, seed, out } => {
            let p = ProblemFile::load(&problem)?.to_problem()?;
            let sol = read_json::<SolutionDoc>(&solution)?.to_solution(&p)?;
            let mech = read_json::<MechanismDoc>(&mechanism)?.mechanism;
            let audit = audit_mechanism(&p, &mech, &sol)?;
            let ic = ic_report(&p, &sol);
            let monte_carlo = mc.map(|n| monte_carlo_audit(&p, &mech, n, seed)).transpose()?;
            let passed = audit.passed && ic.ic_holds && monte_carlo.as_ref().is_none_or(|m| m.passed);
            #[derive(Serialize)]
            struct Report {
                passed: bool,
                audit: verify::AuditReport,
                ic: verify::IcReport,
                monte_carlo: Option<verify::MonteCarloReport>,
            }
            write_json(&out.join("verify.json"), &Report { passed, audit: audit.clone(), ic: ic.clone(), monte_carlo: monte_carlo.clone() })?;
            println!("audit: {} (max |dp| {:e}, max |dz| {:e})", verdict(audit.passed), audit.max_p_error, audit.max_z_error);
            println!("laminar: {}", verdict(audit.laminar.passed()));
            for issue in &audit.laminar.issues {
                println!("  {issue}");
            }
            println!("incentive compatibility: {}", verdict(ic.ic_holds));
            if let Some(m) = &monte_carlo {
                println!("monte carlo ({} samples, seed {}): {} ({} flagged)", m.samples, m.seed, verdict(m.passed), m.flagged);
            }
            Ok(if passed { Status::Ok } else { Status::AssertionFailed })
        }
        Command::Oracle { problem, bins, solution, out } => {
            let p = ProblemFile::load(&problem)?.to_problem()?;
            let oracle = oracle_discrete(&p, bins)?;
            let reference = match solution {
                Some(path) => Some(read_json::<SolutionDoc>(&path)?.to_solution(&p)?.objective),
                None => None,
            };
            #[derive(Serialize)]
            struct Report {
                oracle: verify::OracleResult,
                solution_objective: Option<f64>,
                gap: Option<f64>,
            }
            let gap = reference.map(|r| oracle.objective - r);
            println!("oracle objective at {bins} bins: {:.12}", oracle.objective);
            if let Some(g) = gap {
                println!("gap to solution: {g:e}");
            }
            write_json(&out.join("oracle.json"), &Report { oracle, solution_objective: reference, gap })?;
            Ok(Status::Ok)
        }
        Command::Demo { example, n, out } => {
            let (name, file) = match example {
                Example::Buyer => ("buyer", "demo_buyer.json".to_string()),
                Example::PublicPrivate => ("public_private", format!("demo_public_private_{n}.json")),
            };
            let report = verify::reproduce_example(name, n).context("example failed to run")?;
            print!("{}", report.table());
            write_json(&out.join(file), &report)?;
            Ok(if report.passed() { Status::Ok } else { Status::AssertionFailed })
        }
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}
