//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::cell::Cell;
use std::process::Command;
use std::time::Instant;

use absmin_cli::{CommandReport, RunReport};
use absmin_core::calcvar::{self, BETA};
use absmin_core::invariance::Verdict;
use absmin_core::model;
use absmin_core::quadrature::uniform_grid;
use proptest::prelude::*;
use proptest::test_runner::TestRunner;
use support::*;

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Runs the binary; returns the raw stdout, the exit code and the wall time.
fn absmin(args: &[&str]) -> (Vec<u8>, Option<i32>, f64) {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_absmin"))
        .args(args)
        .output()
        .unwrap();
    (o.stdout, o.status.code(), start.elapsed().as_secs_f64())
}

fn report(args: &[&str]) -> Result<(RunReport, Option<i32>, f64), String> {
    let (out, code, secs) = absmin(args);
    let r = serde_json::from_slice(&out).map_err(|e| format!("bad report for {args:?}: {e}"))?;
    Ok((r, code, secs))
}

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn example1_end_to_end() -> Check {
    let (r, code, secs) = report(&["solve", &fixture("example1.ocp"), "--json"])?;
    let CommandReport::Solve(sol) = r.report else {
        return Err("no solve report".into());
    };
    let m = &sol.minimizer;
    let mut worst = 0.0f64;
    for k in 0..m.len() {
        let t = m.grid()[k];
        let (x, u) = (m.state(k), m.control(k));
        for (got, want) in [(u[0], 0.0), (u[1], 1.0), (x[0], 2.0 * t), (x[1], t)] {
            worst = worst.max((got - want).abs());
        }
    }
    let msg = format!(
        "s* {:.9}, minimum {:.9}, worst pointwise error {worst:.1e} on {} points, {secs:.2} s",
        sol.s_star,
        sol.minimum_value,
        m.len()
    );
    ensure(
        code == Some(0)
            && (sol.s_star + 1.0).abs() <= 1e-6
            && (sol.minimum_value - 1.0).abs() <= 1e-6
            && m.len() == 201
            && m.grid() == uniform_grid(0.0, 1.0, 201).as_slice()
            && worst <= 1e-6
            && secs < 2.0,
        msg,
    )
}

fn invariance_verification() -> Check {
    let start = Instant::now();
    let args = [
        "--s-range",
        "-2,2",
        "--samples",
        "100",
        "--seed",
        "7",
        "--json",
    ];
    let run = |file: &str| -> Result<_, String> {
        let mut a = vec!["verify", file];
        a.extend_from_slice(&args);
        let (r, code, _) = report(&a)?;
        match r.report {
            CommandReport::Verify(v) => Ok((v, code)),
            _ => Err("no verify report".into()),
        }
    };
    let (good, code) = run(&fixture("example1.ocp"))?;
    let (gauge, gauge_code) = run(&fixture("example1_corrupt_gauge.ocp"))?;
    let (map, map_code) = run(&fixture("example1_corrupt_map.ocp"))?;
    let secs = start.elapsed().as_secs_f64();
    let dyn_max = good
        .dynamics_max_residual
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let msg = format!(
        "residuals {:.1e} / {dyn_max:.1e}; corrupted gauge {:?}, corrupted map {:?}; {secs:.2} s for three runs",
        good.lagrangian_max_residual, gauge.verdict, map.verdict
    );
    ensure(
        code == Some(0)
            && good.verdict == Verdict::Invariant
            && good.lagrangian_max_residual <= 1e-9
            && dyn_max <= 1e-9
            && gauge.verdict == Verdict::Violated
            && gauge_code == Some(1)
            && map.verdict == Verdict::Violated
            && map_code == Some(1)
            && secs < 1.0,
        msg,
    )
}

fn gauge_relation() -> Check {
    let p = example1();
    let f = example1_family();
    let strategy = (
        proptest::collection::vec(-0.6..0.6f64, PIECES - 1),
        -2.0..2.0f64,
    )
        .prop_filter_map("last piece outside the box", |(u1, s)| {
            admissible_example1(&u1).map(|t| (t, s))
        });
    let worst = Cell::new(0.0f64);
    let mut runner = TestRunner::new(config(100));
    let outcome = runner.run(&strategy, |(traj, s)| {
        let tol = model::AdmissibilityTolerances::default_for(&p);
        let adm = model::admissibility(&p, &traj, &tol)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(adm.boundary_mismatch <= 1e-12 && adm.box_violation == 0.0);
        let ps = model::transformed_problem(&p, &f, s).unwrap();
        let image = model::apply_transform(&f, &traj, s).unwrap();
        let err = (model::cost(&ps, &image).unwrap()
            - model::cost(&p, &traj).unwrap()
            - (s * s + 2.0 * s))
            .abs();
        worst.set(worst.get().max(err));
        prop_assert!(err <= 1e-4);
        Ok(())
    });
    let msg = format!(
        "100 admissible trajectories, worst |I^s - I - (s^2 + 2s)| {:.1e}",
        worst.get()
    );
    match outcome {
        Ok(()) => Ok(msg),
        Err(e) => Err(format!("{msg}: {e}")),
    }
}

fn example2() -> Check {
    let pf = absmin_cli::load(std::path::Path::new(&fixture("example2.ocp")))
        .map_err(|e| format!("{e:?}"))?;
    let vp = pf.0.variational.ok_or("no variational section")?.problem;
    let (traj, family) = calcvar::solve_el_quadratic(&vp).map_err(|e| e.to_string())?;
    let last = traj.len() - 1;
    let boundary = (traj.state(0)[0] - 0.0)
        .abs()
        .max((traj.state(last)[0] - 0.0).abs());
    let mut shape = 0.0f64;
    for k in 0..traj.len() {
        let t = traj.grid()[k];
        shape = shape.max((traj.state(k)[0] - (-t * t / 4.0 + t / 4.0)).abs());
    }
    let xi = family.xi.compile(&["t", BETA]).map_err(|e| e.to_string())?;
    for beta in [-2.0, 0.0, 0.7] {
        for t in [0.0, 0.3, 1.0] {
            shape =
                shape.max((xi.eval(&[t, beta]).unwrap() - (-t * t / 4.0 + t / 4.0 + beta)).abs());
        }
    }
    let el = calcvar::el_residual(&vp, &traj).map_err(|e| e.to_string())?;
    let suff = calcvar::sufficiency_check(&vp, &family, 1000, 0).map_err(|e| e.to_string())?;
    let c = &suff.convexity;
    let b = &suff.beta_derivative_nonzero;
    let msg = format!(
        "boundary {boundary:.1e}, shape {shape:.1e}, EL residual {el:.1e}, F_xdotxdot in [{}, {}], dxi/dbeta in [{}, {}], certified {}",
        c.min_second_derivative, c.max_second_derivative, b.min_abs, b.max_abs, suff.certified
    );
    ensure(
        boundary <= 1e-12
            && shape <= 1e-12
            && el <= 1e-8
            && suff.certified
            && c.min_second_derivative == 2.0
            && c.max_second_derivative == 2.0
            && b.min_abs == 1.0
            && b.max_abs == 1.0,
        msg,
    )
}

fn crosscheck_gap(file: &str, claimed: f64) -> Result<(f64, f64, Vec<f64>), String> {
    let (r, code, secs) = report(&[
        "crosscheck",
        &fixture(file),
        "--grids",
        "16,32,64",
        "--restarts",
        "4",
        "--json",
    ])?;
    let CommandReport::Crosscheck(c) = r.report else {
        return Err("no crosscheck report".into());
    };
    if code != Some(0) {
        return Err(format!("{file}: exit {code:?}"));
    }
    let objectives: Vec<f64> = c
        .result
        .grids
        .iter()
        .map(|g| g.solution.objective)
        .collect();
    let last = *objectives.last().ok_or("no grids")?;
    Ok(((last - claimed).abs(), secs, objectives))
}

fn cross_validation() -> Check {
    let (gap1, secs1, obj1) = crosscheck_gap("example1.ocp", 1.0)?;
    let (gap2, secs2, obj2) = crosscheck_gap("example2.ocp", -1.0 / 48.0)?;
    let msg = format!(
        "two-state objectives {obj1:.5?} (relative gap {gap1:.1e}, {secs1:.1} s); variational objectives {obj2:.6?} (gap {gap2:.1e}, {secs2:.2} s)"
    );
    ensure(
        gap1 <= 0.05 && gap2 <= 0.003 && secs1 < 30.0 && secs2 < 30.0,
        msg,
    )
}

fn property_suites() -> Check {
    let mut runner = TestRunner::new(config(1000));
    let derivative = runner.run(
        &(arb_expr(&EXPR_VARS), arb_point(3), 0usize..3),
        |(e, p, k)| check_derivative(&e, &EXPR_VARS, &p, k),
    );
    let mut runner = TestRunner::new(config(200));
    let round_trip = runner.run(
        &(arb_trajectory(41), -2.0..2.0f64, 0usize..3),
        |(traj, s, which)| {
            let f = if which == 0 {
                example1_family()
            } else {
                coupled_families().swap_remove(which - 1)
            };
            check_round_trip(&f, &traj, s, 1e-9)
        },
    );
    let runs: [&[&str]; 4] = [
        &["verify", &fixture("example1.ocp"), "--json", "--seed", "5"],
        &["solve", &fixture("example1.ocp"), "--json", "--seed", "5"],
        &[
            "sufficiency",
            &fixture("example2.ocp"),
            "--json",
            "--seed",
            "5",
        ],
        &[
            "crosscheck",
            &fixture("example2.ocp"),
            "--json",
            "--seed",
            "5",
        ],
    ];
    let identical = runs.iter().all(|a| absmin(a).0 == absmin(a).0);
    let msg = format!(
        "derivative vs difference (1000): {}; round trip (200): {}; byte-identical reports: {identical}",
        describe(&derivative),
        describe(&round_trip)
    );
    ensure(derivative.is_ok() && round_trip.is_ok() && identical, msg)
}

fn describe<T: std::fmt::Debug>(r: &Result<(), proptest::test_runner::TestError<T>>) -> String {
    match r {
        Ok(()) => "ok".into(),
        Err(e) => format!("{e}"),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Check); 6] = [
        ("example 1 end to end", example1_end_to_end),
        ("invariance verification", invariance_verification),
        ("gauge relation", gauge_relation),
        ("example 2 extremal and sufficiency", example2),
        ("cross-validation", cross_validation),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (tag, detail) = match check() {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failed += 1;
                ("FAIL", m)
            }
        };
        println!("AC{} {tag} {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
