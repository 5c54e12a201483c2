//! Command-line front end: problem files in, reports out.
//!
//! Exit status is 0 when the command's checks pass, 1 when a check fails or
//! the method finds no solution, and 2 for usage and input errors. Every
//! failure writes one line of the form `error[<kind>]: <file>[:line:col]: ...`
//! to standard error.

pub mod file;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use absmin_core::calcvar::{self, Outcome as CheckOutcome, SufficiencyReport};
use absmin_core::invariance::{self, InvarianceReport, Verdict, VerifyOptions};
use absmin_core::model::{self, Interval, Trajectory};
use absmin_core::numcheck::{self, CrosscheckOptions, CrosscheckReport};
use absmin_core::stsolver::{self, STSolution, SolveOptions};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::file::{parse_problem_file, Diagnostic, ProblemFile};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "absmin",
    version,
    about = "Absolute minimizers of optimal control problems via invariance transformations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that a transformation family leaves the problem invariant up to a gauge term.
    Verify(Flags),
    /// Solve a [problem] through its transformation family, or a [variational] problem in closed form.
    Solve(Flags),
    /// Check the sufficient conditions for a [variational] extremal to be an absolute minimizer.
    Sufficiency(Flags),
    /// Compare a claimed minimum with direct numerical minimization.
    Crosscheck(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Verify(_) => "verify",
            Command::Solve(_) => "solve",
            Command::Sufficiency(_) => "sufficiency",
            Command::Crosscheck(_) => "crosscheck",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Verify(f)
            | Command::Solve(f)
            | Command::Sufficiency(f)
            | Command::Crosscheck(f) => f,
        }
    }
}

fn parse_range(s: &str) -> Result<Interval, String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo < hi) {
        return Err("need lo < hi".into());
    }
    Ok(Interval::new(lo, hi))
}

#[derive(Debug, Clone, clap::Args)]
pub struct Flags {
    /// Problem file (.ocp).
    pub file: PathBuf,
    /// Random samples for invariance, lower-bound and sufficiency checks.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parameter range `lo,hi`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub s_range: Option<Interval>,
    /// RK4 steps for shooting.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Interval counts for crosscheck, ascending.
    #[arg(long, value_delimiter = ',')]
    pub grids: Option<Vec<usize>>,
    /// Endpoint penalty weight for crosscheck.
    #[arg(long)]
    pub penalty: Option<f64>,
    /// Random starts per crosscheck grid.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Residual tolerance (verify), root tolerance (solve) or gap tolerance (crosscheck).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Minimum to cross-check against; derived from the file when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub claimed: Option<f64>,
    /// Print the structured report instead of the summary.
    #[arg(long)]
    pub json: bool,
    /// Include wall time in the structured report.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremalReport {
    pub family: String,
    pub beta_star: f64,
    pub cost: f64,
    pub el_residual: f64,
    pub boundary_mismatch: f64,
    pub extremal: Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyOutput {
    pub family: String,
    pub beta_star: f64,
    /// Whether the family came from the file or from the closed-form extremal.
    pub family_source: String,
    pub checks: SufficiencyReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckOutput {
    /// `flag`, `solve` or `extremal`.
    pub claimed_source: String,
    pub gap_tolerance: f64,
    pub result: CrosscheckReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandReport {
    Verify(InvarianceReport),
    Solve(Box<STSolution>),
    Extremal(ExtremalReport),
    Sufficiency(SufficiencyOutput),
    Crosscheck(CrosscheckOutput),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the problem file bytes.
    pub inputs_digest: String,
    pub passed: bool,
    pub report: CommandReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

/// What the process should print and return.
#[derive(Debug)]
pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

#[derive(Debug)]
enum Failure {
    /// Exit 2.
    Input { kind: &'static str, message: String },
    /// Exit 1.
    Method { kind: &'static str, message: String },
}

fn input(kind: &'static str, message: impl Into<String>) -> Failure {
    Failure::Input {
        kind,
        message: message.into(),
    }
}

impl From<absmin_core::Error> for Failure {
    fn from(e: absmin_core::Error) -> Self {
        use absmin_core::Error as E;
        let kind = match &e {
            E::Parse(_) => "parse",
            E::Eval(_) => "eval",
            E::InvalidProblem(_) => "invalid-problem",
            E::InvalidTransform(_) => "invalid-transform",
            E::InvalidTrajectory(_) => "invalid-trajectory",
            E::NonMonotoneTimeMap { .. } => "time-map",
            E::Inversion { .. } => "inversion",
            E::ControlDependentGauge(_) => "gauge",
            E::NotInvariant { .. } => "not-invariant",
            E::NoAdmissibleParameter { .. } => "no-admissible-parameter",
            E::UnsupportedStructure(_) => "unsupported-structure",
            E::NoExtremal(_) => "no-extremal",
            E::Unsupported(_) => "unsupported",
        };
        let message = e.to_string();
        match e {
            E::Parse(_)
            | E::InvalidProblem(_)
            | E::InvalidTransform(_)
            | E::ControlDependentGauge(_)
            | E::UnsupportedStructure(_)
            | E::Unsupported(_) => Failure::Input { kind, message },
            _ => Failure::Method { kind, message },
        }
    }
}

pub fn load(path: &Path) -> Result<(ProblemFile, String), (Option<Diagnostic>, String)> {
    let bytes = std::fs::read(path).map_err(|e| (None, e.to_string()))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let text =
        String::from_utf8(bytes).map_err(|_| (None, "file is not valid UTF-8".to_owned()))?;
    parse_problem_file(&text)
        .map(|f| (f, digest))
        .map_err(|d| (Some(d), String::new()))
}

struct Done {
    passed: bool,
    report: CommandReport,
}

fn verify_options(flags: &Flags) -> VerifyOptions {
    let mut o = VerifyOptions {
        seed: flags.seed,
        ..VerifyOptions::default()
    };
    if let Some(n) = flags.samples {
        o.n_samples = n;
    }
    if let Some(r) = flags.s_range {
        o.s_range = r;
    }
    if let Some(t) = flags.tol {
        o.tolerance = t;
    }
    o
}

fn solve_options(flags: &Flags) -> SolveOptions {
    let mut o = SolveOptions::default().with_seed(flags.seed);
    o.verify = verify_options(flags);
    o.verify.tolerance = VerifyOptions::default().tolerance;
    if let Some(n) = flags.samples {
        o.lower_bound.n_samples = n;
    }
    if let Some(r) = flags.s_range {
        o.parameter.s_range = r;
    }
    if let Some(n) = flags.steps {
        o.parameter.n_steps = n;
    }
    if let Some(t) = flags.tol {
        o.parameter.tolerance = t;
    }
    o
}

fn need<'a, T>(v: &'a Option<T>, what: &str, command: &str) -> Result<&'a T, Failure> {
    v.as_ref().ok_or_else(|| {
        input(
            "missing-section",
            format!("`{command}` needs a [{what}] section"),
        )
    })
}

fn solve_problem(pf: &ProblemFile, flags: &Flags) -> Result<STSolution, Failure> {
    let p = need(&pf.problem, "problem", "solve")?;
    let f = need(&pf.transform, "transform", "solve")?;
    let c = need(&pf.candidate, "candidate", "solve")?;
    Ok(stsolver::solve(p, f, c, &solve_options(flags))?)
}

fn extremal(pf: &ProblemFile) -> Result<ExtremalReport, Failure> {
    let v = need(&pf.variational, "variational", "solve")?;
    let vp = &v.problem;
    let (traj, fam) = calcvar::solve_el_quadratic(vp)?;
    let last = traj.len() - 1;
    Ok(ExtremalReport {
        family: fam.xi.to_string(),
        beta_star: fam.beta_star,
        cost: model::cost(&vp.to_control_problem(), &traj)?,
        el_residual: calcvar::el_residual(vp, &traj)?,
        boundary_mismatch: (traj.state(0)[0] - vp.boundary.0)
            .abs()
            .max((traj.state(last)[0] - vp.boundary.1).abs()),
        extremal: traj,
    })
}

fn execute(command: &Command, pf: &ProblemFile) -> Result<Done, Failure> {
    let flags = command.flags();
    match command {
        Command::Verify(_) => {
            let p = need(&pf.problem, "problem", "verify")?;
            let f = need(&pf.transform, "transform", "verify")?;
            let r = invariance::verify(p, f, &verify_options(flags))?;
            Ok(Done {
                passed: r.verdict == Verdict::Invariant,
                report: CommandReport::Verify(r),
            })
        }
        Command::Solve(_) if pf.variational.is_some() => Ok(Done {
            passed: true,
            report: CommandReport::Extremal(extremal(pf)?),
        }),
        Command::Solve(_) => {
            let sol = solve_problem(pf, flags)?;
            Ok(Done {
                passed: sol.certificates.all_passed(),
                report: CommandReport::Solve(Box::new(sol)),
            })
        }
        Command::Sufficiency(_) => {
            let v = need(&pf.variational, "variational", "sufficiency")?;
            let (family, source) = match &v.family {
                Some(f) => (f.clone(), "file"),
                None => (calcvar::solve_el_quadratic(&v.problem)?.1, "extremal"),
            };
            let checks = calcvar::sufficiency_check(
                &v.problem,
                &family,
                flags.samples.unwrap_or(100),
                flags.seed,
            )?;
            Ok(Done {
                passed: checks.certified,
                report: CommandReport::Sufficiency(SufficiencyOutput {
                    family: family.xi.to_string(),
                    beta_star: family.beta_star,
                    family_source: source.into(),
                    checks,
                }),
            })
        }
        Command::Crosscheck(_) => {
            let (p, claimed, source) = match (&pf.problem, &pf.variational) {
                (Some(p), _) => match flags.claimed {
                    Some(c) => (p.clone(), c, "flag"),
                    None => (p.clone(), solve_problem(pf, flags)?.minimum_value, "solve"),
                },
                (None, Some(v)) => match flags.claimed {
                    Some(c) => (v.problem.to_control_problem(), c, "flag"),
                    None => (
                        v.problem.to_control_problem(),
                        extremal(pf)?.cost,
                        "extremal",
                    ),
                },
                (None, None) => unreachable!("the parser requires one formulation"),
            };
            let mut opts = CrosscheckOptions::default();
            opts.minimize.seed = flags.seed;
            if let Some(w) = flags.penalty {
                opts.penalty_weight = w;
            }
            if let Some(r) = flags.restarts {
                opts.minimize.restarts = r;
            }
            let grids = flags.grids.clone().unwrap_or_else(|| vec![16, 32, 64]);
            let gap_tolerance = flags.tol.unwrap_or(0.05 * claimed.abs().max(1.0));
            let result = numcheck::crosscheck(&p, claimed, &grids, &opts)?;
            Ok(Done {
                passed: result.final_gap <= gap_tolerance
                    && result.upper_bound_respected
                    && result.gaps_non_increasing,
                report: CommandReport::Crosscheck(CrosscheckOutput {
                    claimed_source: source.into(),
                    gap_tolerance,
                    result,
                }),
            })
        }
    }
}

/// Runs one command. Never panics on bad input; the caller prints the
/// returned streams and exits with the code.
pub fn run(cli: &Cli) -> Output {
    let flags = cli.command.flags();
    let path = flags.file.display().to_string();
    let fail = |code: i32, kind: &str, loc: String, message: &str| Output {
        code,
        stdout: String::new(),
        stderr: format!("error[{kind}]: {loc}: {message}\n"),
    };
    let start = Instant::now();
    let (pf, digest) = match load(&flags.file) {
        Ok(v) => v,
        Err((Some(d), _)) => {
            return fail(
                2,
                "parse",
                format!("{path}:{}:{}", d.line, d.col),
                &d.message,
            )
        }
        Err((None, msg)) => return fail(2, "io", path, &msg),
    };
    let done = match execute(&cli.command, &pf) {
        Ok(d) => d,
        Err(Failure::Input { kind, message }) => return fail(2, kind, path, &message),
        Err(Failure::Method { kind, message }) => return fail(1, kind, path, &message),
    };
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        command: cli.command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: flags.seed,
        inputs_digest: digest,
        passed: done.passed,
        report: done.report,
        wall_time_ms: flags.timing.then_some(elapsed_ms),
    };
    let stdout = if flags.json {
        let mut s = serde_json::to_string_pretty(&report).expect("reports serialize");
        s.push('\n');
        s
    } else {
        render(&report, &path, elapsed_ms)
    };
    let stderr = if report.passed {
        String::new()
    } else {
        format!(
            "error[check-failed]: {path}: {} did not pass\n",
            report.command
        )
    };
    Output {
        code: if report.passed { 0 } else { 1 },
        stdout,
        stderr,
    }
}

fn outcome(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "FAIL"
    }
}

fn render(r: &RunReport, path: &str, elapsed_ms: f64) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "absmin {} {path}", r.command);
    match &r.report {
        CommandReport::Verify(v) => {
            let _ = writeln!(w, "verdict:              {:?}", v.verdict);
            let _ = writeln!(w, "lagrangian residual:  {:.3e}", v.lagrangian_max_residual);
            for (i, d) in v.dynamics_max_residual.iter().enumerate() {
                let _ = writeln!(w, "dynamics residual {i}:  {d:.3e}");
            }
            let _ = writeln!(
                w,
                "samples:              {} (s in [{}, {}], {} redrawn)",
                v.samples_used, v.s_range.lo, v.s_range.hi, v.domain_errors
            );
            if let Some(ws) = &v.worst_sample {
                let _ = writeln!(
                    w,
                    "worst sample:         t={} x={:?} u={:?} s={}",
                    ws.t, ws.x, ws.u, ws.s
                );
            }
        }
        CommandReport::Solve(sol) => {
            let _ = writeln!(w, "s*:                   {}", sol.s_star);
            if !sol.other_roots.is_empty() {
                let _ = writeln!(
                    w,
                    "other roots:          {:?} (smallest |s| chosen)",
                    sol.other_roots
                );
            }
            let _ = writeln!(w, "minimum value:        {}", sol.minimum_value);
            let _ = writeln!(
                w,
                "  transformed cost {} minus gauge offset {}",
                sol.transformed_cost, sol.gauge_offset
            );
            let c = &sol.certificates;
            let _ = writeln!(
                w,
                "invariance:           {}",
                outcome(c.invariance.verdict == Verdict::Invariant)
            );
            let _ = writeln!(w, "lower bound:          {}", outcome(c.lower_bound.passed));
            let _ = writeln!(
                w,
                "admissibility:        {} (dynamics {:.1e}, boundary {:.1e}, box {:.1e})",
                outcome(c.admissibility.admissible),
                c.admissibility.dynamics_residual,
                c.admissibility.boundary_mismatch,
                c.admissibility.box_violation
            );
            let m = &sol.minimizer;
            let _ = writeln!(w, "minimizer:            t, states, controls");
            let last = m.len() - 1;
            for k in [0, last / 4, last / 2, 3 * last / 4, last] {
                let _ = writeln!(
                    w,
                    "  {:<8.4} {:?} {:?}",
                    m.grid()[k],
                    m.state(k),
                    m.control(k)
                );
            }
        }
        CommandReport::Extremal(e) => {
            let _ = writeln!(w, "extremal family:      xi(t, beta) = {}", e.family);
            let _ = writeln!(w, "beta*:                {}", e.beta_star);
            let _ = writeln!(w, "cost:                 {}", e.cost);
            let _ = writeln!(w, "EL residual:          {:.3e}", e.el_residual);
            let _ = writeln!(w, "boundary mismatch:    {:.3e}", e.boundary_mismatch);
        }
        CommandReport::Sufficiency(o) => {
            let c = &o.checks;
            let _ = writeln!(
                w,
                "family:               xi(t, beta) = {}, beta* = {} (from {})",
                o.family, o.beta_star, o.family_source
            );
            let conv = match c.convexity.outcome {
                CheckOutcome::Pass => "pass",
                CheckOutcome::Fail => "FAIL",
                CheckOutcome::Inconclusive => "inconclusive",
            };
            let _ = writeln!(
                w,
                "convexity in xdot:    {conv} (F_xdot,xdot in [{}, {}])",
                c.convexity.min_second_derivative, c.convexity.max_second_derivative
            );
            let _ = writeln!(
                w,
                "family of extremals:  {} (boundary {:.1e}, EL residual {:.1e})",
                outcome(c.family_exists.passed),
                c.family_exists.boundary_mismatch,
                c.family_exists.max_el_residual
            );
            let _ = writeln!(
                w,
                "d xi / d beta != 0:   {} (|.| in [{}, {}])",
                outcome(c.beta_derivative_nonzero.passed),
                c.beta_derivative_nonzero.min_abs,
                c.beta_derivative_nonzero.max_abs
            );
            let _ = writeln!(
                w,
                "absolute minimizer:   {}",
                if c.certified {
                    "certified"
                } else {
                    "not certified"
                }
            );
        }
        CommandReport::Crosscheck(o) => {
            let x = &o.result;
            let _ = writeln!(
                w,
                "claimed minimum:      {} ({})",
                x.claimed_minimum, o.claimed_source
            );
            let _ = writeln!(
                w,
                "  N     objective       cost            penalty     gap        converged"
            );
            for g in &x.grids {
                let s = &g.solution;
                let _ = writeln!(
                    w,
                    "  {:<5} {:<15.9} {:<15.9} {:<11.3e} {:<10.3e} {}",
                    s.n_intervals, s.objective, s.cost, s.penalty, g.gap, s.converged
                );
            }
            let _ = writeln!(
                w,
                "final gap:            {:.3e} (tolerance {:.3e})",
                x.final_gap, o.gap_tolerance
            );
            let _ = writeln!(
                w,
                "gaps non-increasing:  {}",
                outcome(x.gaps_non_increasing)
            );
            let _ = writeln!(
                w,
                "upper bound:          {}",
                outcome(x.upper_bound_respected)
            );
        }
    }
    let _ = writeln!(
        w,
        "result:               {}",
        if r.passed { "PASS" } else { "FAIL" }
    );
    let _ = writeln!(w, "seed {}, {:.1} ms", r.seed, elapsed_ms);
    s
}
