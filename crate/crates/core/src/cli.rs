use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use bridgekit::additive::{decompose_to_potentials, SumDecomposition};
use bridgekit::fixtures;
use bridgekit::guard::{self, ORACLE_CELL_LIMIT};
use bridgekit::io::{read_json, write_json_atomic, CertificateDoc, DensityDoc, FixtureDoc, MeasureBody, PathDoc, ProblemDoc, Route, SolutionDoc};
use bridgekit::markov::{is_irreducible, is_markov, is_reciprocal, IrreducibilityMode, DEFAULT_TOL};
use bridgekit::measure::parse_time;
use bridgekit::solvers::{self, oracle_minimize, SolveOptions, DEFAULT_MAX_ITER};
use bridgekit::Error;

/// Agreement required between `solve` and `oracle` for the cross-check to pass.
const CROSS_CHECK_OBJECTIVE: f64 = 1e-8;
const CROSS_CHECK_TV: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "bridgekit", version, about = "Entropy minimization over finite path measures")]
struct Cli {
    /// Largest dense tensor allowed, in cells.
    #[arg(long, global = true, env = guard::SIZE_GUARD_ENV)]
    size_guard: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Io {
    #[arg(long)]
    input: PathBuf,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Fit {
    #[arg(long, default_value_t = solvers::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimize relative entropy under the marginal (and optional endpoint) targets.
    Solve {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        fit: Fit,
        /// Solve an endpoint problem through the fold at this time, e.g. "1/2".
        #[arg(long)]
        lambda: Option<String>,
        /// Print one JSON line per cycle on standard error.
        #[arg(long)]
        trace: bool,
    },
    /// Test a structural property of a path measure.
    Check {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_enum)]
        property: PropertyArg,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Split a density into potentials, or a fixture's pair function over its endpoints.
    Decompose {
        #[command(flatten)]
        io: Io,
    },
    /// List or export built-in instances.
    Fixture {
        #[command(subcommand)]
        action: FixtureAction,
    },
    /// Brute-force minimizer, cross-checked against `solve`.
    Oracle {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        fit: Fit,
    },
}

#[derive(Subcommand, Debug)]
enum FixtureAction {
    List,
    Export {
        #[arg(long)]
        fixture_name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        states: usize,
        #[arg(long, default_value_t = 4)]
        times: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PropertyArg {
    Markov,
    Reciprocal,
    Irreducible,
    IrreducibleReciprocal,
}

const FIXTURES: &[(&str, &str)] = &[
    ("shared-midpoint", "non-reciprocal measure whose endpoint function admits no sum split"),
    ("reducible-chain", "reducible Markov chain whose endpoint function admits no sum split"),
    ("planted-violation", "seeded reducible chain with a planted split violation"),
    ("chain", "seeded Markov chain with structural zeros"),
    ("reciprocal", "seeded reciprocal, non-Markov measure"),
    ("schrodinger", "seeded feasible problem with marginal targets"),
    ("brodinger", "seeded feasible problem with marginal and endpoint targets"),
];

/// Outcome of a command: the report and whether it signals failure.
struct Outcome {
    report: serde_json::Value,
    ok: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MeasureInput {
    Path(PathDoc),
    Problem(ProblemDoc),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DecomposeInput {
    Fixture(FixtureDoc),
    Density(DensityDoc),
}

fn value<T: Serialize>(v: &T) -> Result<serde_json::Value, Error> {
    Ok(serde_json::to_value(v)?)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_)
        | Error::InvalidInput(_)
        | Error::SizeGuard { .. }
        | Error::BadCoords(_)
        | Error::ShapeMismatch(..)
        | Error::NotProbability { .. }
        | Error::BadFoldGrid(_) => 2,
        _ => 1,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Parse(_) => "parse",
        Error::SizeGuard { .. } => "size_guard",
        Error::InfeasibleProblem(_) => "infeasible",
        Error::ReconstructionFailed { .. } => "reconstruction_failed",
        e if exit_code(e) == 2 => "invalid_input",
        _ => "failed",
    }
}

pub fn run<I: IntoIterator<Item = T>, T: Into<OsString> + Clone>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let limit = cli.size_guard.filter(|&v| v > 0).unwrap_or_else(guard::default_cell_limit);
    let output = match &cli.command {
        Command::Solve { io, .. } | Command::Check { io, .. } | Command::Decompose { io } | Command::Oracle { io, .. } => io.output.clone(),
        Command::Fixture { action: FixtureAction::Export { output, .. } } => output.clone(),
        Command::Fixture { action: FixtureAction::List } => None,
    };
    let (report, code) = match execute(cli, limit) {
        Ok(Outcome { report, ok }) => (report, if ok { 0 } else { 1 }),
        Err(err) => {
            let code = exit_code(&err);
            let mut report = json!({ "status": "error", "kind": error_kind(&err), "message": err.to_string() });
            if let Error::InfeasibleProblem(witness) = &err {
                report["status"] = json!("infeasible");
                if let Ok(w) = serde_json::from_str::<serde_json::Value>(witness) {
                    report["witness"] = w;
                }
            }
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
            if code == 2 {
                return code;
            }
            (report, code)
        }
    };
    let written = match output {
        Some(path) => write_json_atomic(&path, &report),
        None => serde_json::to_string_pretty(&report).map_err(Error::from).and_then(|text| {
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Internal(e.to_string())),
                _ => Ok(()),
            }
        }),
    };
    match written {
        Ok(()) => code,
        Err(e) => {
            let report = json!({ "status": "error", "kind": error_kind(&e), "message": e.to_string() });
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
            2
        }
    }
}

fn options(fit: &Fit, limit: usize) -> SolveOptions {
    SolveOptions { tol: fit.tol, max_iter: fit.max_iter, limit }
}

fn execute(cli: Cli, limit: usize) -> Result<Outcome, Error> {
    match cli.command {
        Command::Solve { io, fit, lambda, trace } => {
            let spec = read_json::<ProblemDoc>(&io.input)?.load(limit)?;
            let opts = options(&fit, limit);
            let lambda = lambda.as_deref().map(parse_time).transpose()?;
            let (sol, route) = match lambda {
                Some(l) => (solvers::solve_brodinger_via_folding(&spec, Some(l), &opts)?, Route::Folding),
                None => {
                    let mut stderr = std::io::stderr().lock();
                    let mut on_cycle = |rec: &solvers::CycleRecord| {
                        if trace {
                            let _ = writeln!(stderr, "{}", serde_json::to_string(rec).unwrap_or_default());
                        }
                    };
                    (solvers::solve_with(&spec, &opts, &mut on_cycle)?, Route::Direct)
                }
            };
            let mut report = value(&SolutionDoc::new(&sol, route, lambda))?;
            report["status"] = json!(if sol.converged { "converged" } else { "not_converged" });
            Ok(Outcome { report, ok: sol.converged })
        }
        Command::Check { io, property, tol } => {
            if !(tol > 0.0) {
                return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
            }
            let reference = match read_json::<MeasureInput>(&io.input)? {
                MeasureInput::Path(doc) => doc.load(limit)?,
                MeasureInput::Problem(doc) => doc.load(limit)?.reference().clone(),
            };
            let q = reference.to_dense(limit)?;
            let report = match property {
                PropertyArg::Markov => is_markov(&q, tol)?,
                PropertyArg::Reciprocal => is_reciprocal(&q, tol)?,
                PropertyArg::Irreducible => is_irreducible(&q, IrreducibilityMode::MarkovPairs, tol)?,
                PropertyArg::IrreducibleReciprocal => is_irreducible(&q, IrreducibilityMode::ReciprocalTriples, tol)?,
            };
            Ok(Outcome { ok: report.holds, report: value(&report)? })
        }
        Command::Decompose { io } => match read_json::<DecomposeInput>(&io.input)? {
            DecomposeInput::Fixture(doc) => {
                let fx = doc.load(limit)?;
                let space = fx.r.space().clone();
                Ok(match fx.decompose()? {
                    SumDecomposition::Split { f_s, f_t, pivot } => Outcome {
                        report: json!({
                            "status": "split",
                            "name": fx.name,
                            "f_s": f_s,
                            "f_t": f_t,
                            "pivot": pivot.map(|y| space.label(y).to_string()),
                        }),
                        ok: true,
                    },
                    SumDecomposition::Infeasible(cert) => Outcome {
                        report: json!({
                            "status": "infeasible",
                            "name": fx.name,
                            "certificate": value(&CertificateDoc::new(&cert, &space))?,
                        }),
                        ok: false,
                    },
                })
            }
            DecomposeInput::Density(doc) => {
                let (p, r, times, endpoint) = doc.load(limit)?;
                match decompose_to_potentials(&p, &r, &times, endpoint) {
                    Ok(potentials) => {
                        let (error, _) = potentials.reconstruction_error(&p, &r)?;
                        Ok(Outcome {
                            report: json!({
                                "status": "decomposed",
                                "potentials": value(&potentials)?,
                                "reconstruction_error": error,
                            }),
                            ok: true,
                        })
                    }
                    Err(e @ (Error::ReconstructionFailed { .. } | Error::NotMarkov { .. } | Error::NotIrreducible(_))) => {
                        Ok(Outcome { report: json!({ "status": "failed", "message": e.to_string() }), ok: false })
                    }
                    Err(e) => Err(e),
                }
            }
        },
        Command::Fixture { action: FixtureAction::List } => Ok(Outcome {
            report: json!(FIXTURES.iter().map(|(name, about)| json!({ "name": name, "description": about })).collect::<Vec<_>>()),
            ok: true,
        }),
        Command::Fixture { action: FixtureAction::Export { fixture_name, seed, states, times, .. } } => {
            let report = match fixture_name.as_str() {
                "shared-midpoint" => value(&FixtureDoc::from_fixture(&fixtures::shared_midpoint()))?,
                "reducible-chain" => value(&FixtureDoc::from_fixture(&fixtures::reducible_chain()))?,
                "planted-violation" => value(&FixtureDoc::from_fixture(&fixtures::planted_violation(seed)))?,
                "chain" => {
                    let m = fixtures::random_chain(seed, states, times, 0.25)?;
                    value(&PathDoc::new(m.space(), m.grid(), MeasureBody::from_markov(&m)))?
                }
                "reciprocal" => {
                    let q = fixtures::random_reciprocal(seed, states, times, limit)?;
                    value(&PathDoc::new(q.space(), q.grid(), MeasureBody::from_dense(&q)))?
                }
                "schrodinger" | "brodinger" => {
                    let endpoint = fixture_name == "brodinger";
                    let spec = fixtures::random_problem(seed, states, times, times.min(2), endpoint, 0.25, limit)?;
                    value(&ProblemDoc::from_spec(&spec))?
                }
                other => {
                    let known: Vec<&str> = FIXTURES.iter().map(|f| f.0).collect();
                    return Err(Error::InvalidInput(format!("unknown fixture {other}; known: {}", known.join(", "))));
                }
            };
            Ok(Outcome { report, ok: true })
        }
        Command::Oracle { io, fit } => {
            let oracle_limit = cli.size_guard.filter(|&v| v > 0).unwrap_or(ORACLE_CELL_LIMIT);
            let spec = read_json::<ProblemDoc>(&io.input)?.load(limit)?;
            let oracle = oracle_minimize(&spec, oracle_limit)?;
            let sol = solvers::solve(&spec, &options(&fit, limit))?;
            let difference = (sol.objective - oracle.objective).abs();
            let tv = solvers::tv_distance(&sol.p, &oracle.p)?;
            let agrees = sol.converged && difference <= CROSS_CHECK_OBJECTIVE && tv <= CROSS_CHECK_TV;
            let report = json!({
                "status": if agrees { "agrees" } else { "disagrees" },
                "oracle": {
                    "objective": oracle.objective,
                    "kkt_residual": oracle.kkt_residual,
                    "steps": oracle.steps,
                    "solution": value(&PathDoc::new(oracle.p.space(), oracle.p.grid(), MeasureBody::from_dense(&oracle.p)))?,
                },
                "cross_check": {
                    "solve_objective": sol.objective,
                    "solve_converged": sol.converged,
                    "solve_iterations": sol.iterations,
                    "objective_difference": difference,
                    "tv_distance": tv,
                },
            });
            Ok(Outcome { report, ok: agrees })
        }
    }
}
