//! Generators and checks shared by the property tests and the acceptance
//! suite.
#![allow(dead_code)]

use absmin_core::expr::{parse, BinaryOp, Binding, Expr, UnaryOp};
use absmin_core::model::{self, Interval, Problem, Trajectory, TransformFamily};
use absmin_core::quadrature::uniform_grid;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestCaseError};

/// Fixed seed, no persistence files, generous rejection budget.
pub fn config(cases: u32) -> Config {
    Config {
        cases,
        failure_persistence: None,
        rng_seed: RngSeed::Fixed(0x5eed),
        max_global_rejects: 100_000,
        ..Config::default()
    }
}

pub const EXPR_VARS: [&str; 3] = ["a", "b", "c"];

/// Random expression trees over `vars`, at most six levels deep.
pub fn arb_expr(vars: &'static [&'static str]) -> BoxedStrategy<Expr> {
    let leaf = prop_oneof![
        (-300i32..300).prop_map(|c| Expr::constant(c as f64 / 100.0)),
        proptest::sample::select(vars).prop_map(Expr::var),
    ];
    leaf.prop_recursive(6, 64, 2, |inner| {
        prop_oneof![
            1 => (
                proptest::sample::select(vec![
                    UnaryOp::Neg,
                    UnaryOp::Exp,
                    UnaryOp::Log,
                    UnaryOp::Sin,
                    UnaryOp::Cos,
                    UnaryOp::Sqrt
                ]),
                inner.clone()
            )
                .prop_map(|(op, a)| Expr::unary(op, a)),
            3 => (
                proptest::sample::select(vec![BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div]),
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| Expr::binary(op, a, b)),
            1 => (inner.clone(), 0u8..4).prop_map(|(a, k)| Expr::pow(a, Expr::constant(k as f64))),
            1 => (inner.clone(), inner).prop_map(|(a, b)| Expr::pow(a, b)),
        ]
    })
    .boxed()
}

pub fn arb_point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0..2.0f64, n)
}

pub fn binding(vars: &[&str], values: &[f64]) -> Binding {
    vars.iter().zip(values).map(|(v, x)| (*v, *x)).collect()
}

const FD_STEP: f64 = 1e-5;

/// Symbolic derivative against a central difference with `h = 1e-5`,
/// tolerance `1e-4·(1 + |d|)`. Points where the expression is undefined
/// nearby, or where halving `h` moves the difference quotient by more than a
/// quarter of the tolerance (the function is not resolved at this step), are
/// rejected rather than judged.
pub fn check_derivative(
    e: &Expr,
    vars: &[&str],
    values: &[f64],
    k: usize,
) -> Result<(), TestCaseError> {
    let b = binding(vars, values);
    let Ok(d) = e.diff(vars[k]).eval(&b) else {
        return Err(TestCaseError::reject("derivative undefined"));
    };
    let f = |x: f64| {
        let mut b2 = b.clone();
        b2.set(vars[k], x);
        e.eval(&b2)
    };
    let x = values[k];
    let quotient = |h: f64| -> Option<f64> { Some((f(x + h).ok()? - f(x - h).ok()?) / (2.0 * h)) };
    let (Some(fd), Some(fd_half)) = (quotient(FD_STEP), quotient(FD_STEP / 2.0)) else {
        return Err(TestCaseError::reject("undefined within one step"));
    };
    let tol = 1e-4 * (1.0 + d.abs());
    if (fd - fd_half).abs() > tol / 4.0 {
        return Err(TestCaseError::reject("not resolved at this step"));
    }
    prop_assert!(
        (d - fd).abs() <= tol,
        "{e} d/d{}: symbolic {d}, difference {fd}",
        vars[k]
    );
    Ok(())
}

pub fn example1() -> Problem {
    let syms = ["t", "x1", "x2", "u1", "u2"];
    Problem {
        states: vec!["x1".into(), "x2".into()],
        controls: vec!["u1".into(), "u2".into()],
        t0: 0.0,
        t1: 1.0,
        lagrangian: parse("u1^2 + u2^2", &syms).unwrap(),
        dynamics: vec![
            parse("exp(u1) + u1 + u2", &syms).unwrap(),
            parse("u2", &syms).unwrap(),
        ],
        boundary: vec![(0.0, 2.0), (0.0, 1.0)],
        control_bounds: vec![Some(Interval::new(-1.0, 1.0)); 2],
    }
}

fn family(p: &Problem, t: &str, maps: [&str; 4], gauge: &str) -> TransformFamily {
    let mut f = TransformFamily::identity(p);
    let syms = f.symbols();
    f.time_map = parse(t, &syms).unwrap();
    f.state_maps = vec![
        parse(maps[0], &syms).unwrap(),
        parse(maps[1], &syms).unwrap(),
    ];
    f.control_maps = vec![
        parse(maps[2], &syms).unwrap(),
        parse(maps[3], &syms).unwrap(),
    ];
    f.gauge = parse(gauge, &syms).unwrap();
    f
}

pub fn example1_family() -> TransformFamily {
    family(
        &example1(),
        "t",
        ["x1 + s*t", "x2 + s*t", "u1", "u2 + s"],
        "s^2*t + 2*s*x2",
    )
}

/// Invertible families with non-trivial time and state coupling, used only
/// for round trips.
pub fn coupled_families() -> Vec<TransformFamily> {
    let p = example1();
    vec![
        family(
            &p,
            "t + s",
            ["x1*exp(s)", "x2 + s*x1", "u1 + s*t", "u2*exp(-s)"],
            "0",
        ),
        family(
            &p,
            "t*exp(s)",
            ["x1 + sin(s)*x2", "x2", "u1 + s*x1", "u2"],
            "s*t",
        ),
    ]
}

/// `a + b·t + c·sin(ω·t + φ)`.
#[derive(Clone, Copy, Debug)]
pub struct Wave {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub omega: f64,
    pub phi: f64,
}

impl Wave {
    pub fn at(&self, t: f64) -> f64 {
        self.a + self.b * t + self.c * (self.omega * t + self.phi).sin()
    }
}

pub fn arb_wave() -> impl Strategy<Value = Wave> {
    (
        -2.0..2.0f64,
        -2.0..2.0f64,
        -1.0..1.0f64,
        0.5..4.0f64,
        0.0..6.3f64,
    )
        .prop_map(|(a, b, c, omega, phi)| Wave {
            a,
            b,
            c,
            omega,
            phi,
        })
}

/// Smooth random trajectory: two states and two controls on a uniform grid
/// over `[0, 1]` (not required to satisfy any dynamics).
pub fn arb_trajectory(points: usize) -> impl Strategy<Value = Trajectory> {
    proptest::collection::vec(arb_wave(), 4).prop_map(move |w| {
        Trajectory::from_fn(uniform_grid(0.0, 1.0, points), |t| {
            (vec![w[0].at(t), w[1].at(t)], vec![w[2].at(t), w[3].at(t)])
        })
        .unwrap()
    })
}

/// `invert(apply(traj, s), s)` reproduces `traj` to `tol`.
pub fn check_round_trip(
    f: &TransformFamily,
    traj: &Trajectory,
    s: f64,
    tol: f64,
) -> Result<(), TestCaseError> {
    let image =
        model::apply_transform(f, traj, s).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let back =
        model::invert_transform(f, &image, s).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let err = back.max_abs_diff(traj);
    prop_assert!(err <= tol, "round trip error {err:e} at s = {s}");
    Ok(())
}

/// Pieces of the piecewise-constant controls in [`admissible_example1`].
pub const PIECES: usize = 8;
/// Grid intervals per piece; even, so Simpson pairs never straddle a jump.
pub const PER_PIECE: usize = 24;

fn g(u: f64) -> f64 {
    u.exp() + u
}

/// Exactly admissible pair of the two-state example: `u2 ≡ 1` (forced by the
/// box and `x2(1) = 1`), `u1` piecewise constant with the first pieces from
/// `u1_free` and the last solved so that `x1(1) = 2`. States are the exact
/// piecewise-linear integrals. `None` when the last piece would leave
/// `[-1, 1]`.
pub fn admissible_example1(u1_free: &[f64]) -> Option<Trajectory> {
    assert_eq!(u1_free.len(), PIECES - 1);
    // x1(1) = Σ (g(u1) + 1)/PIECES = 2
    let need = PIECES as f64 - u1_free.iter().map(|&u| g(u)).sum::<f64>();
    // g is increasing; bisection for g(u) = need on [-1, 1]
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    if !(g(lo) <= need && need <= g(hi)) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < need {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u1 = u1_free.to_vec();
    u1.push(0.5 * (lo + hi));
    Some(piecewise_example1(&u1, &[1.0; PIECES]))
}

/// States integrated exactly from `x(0) = 0` under piecewise-constant
/// controls of equal duration on `[0, 1]`. At a jump the grid node carries
/// the control of the piece to its right.
pub fn piecewise_example1(u1: &[f64], u2: &[f64]) -> Trajectory {
    let pieces = u1.len();
    let dt = 1.0 / pieces as f64;
    let grid = uniform_grid(0.0, 1.0, pieces * PER_PIECE + 1);
    Trajectory::from_fn(grid.clone(), |t| {
        let (mut x1, mut x2) = (0.0, 0.0);
        for p in 0..pieces {
            let len = (t.min((p + 1) as f64 * dt) - p as f64 * dt).max(0.0);
            x1 += len * (g(u1[p]) + u2[p]);
            x2 += len * u2[p];
        }
        let k = grid.iter().position(|&g| g == t).unwrap();
        let piece = (k / PER_PIECE).min(pieces - 1);
        (vec![x1, x2], vec![u1[piece], u2[piece]])
    })
    .unwrap()
}

/// Same states as [`piecewise_example1`] but with the smooth second control
/// `u2 = a + b·sin(ω·t + φ)`.
pub fn mixed_example1(u1: &[f64], (a, b, omega, phi): (f64, f64, f64, f64)) -> Trajectory {
    let pieces = u1.len();
    let dt = 1.0 / pieces as f64;
    let grid = uniform_grid(0.0, 1.0, pieces * PER_PIECE + 1);
    Trajectory::from_fn(grid.clone(), |t| {
        let x2 = a * t - b / omega * ((omega * t + phi).cos() - phi.cos());
        let mut x1 = x2;
        for p in 0..pieces {
            x1 += (t.min((p + 1) as f64 * dt) - p as f64 * dt).max(0.0) * g(u1[p]);
        }
        let k = grid.iter().position(|&g| g == t).unwrap();
        let piece = (k / PER_PIECE).min(pieces - 1);
        (
            vec![x1, x2],
            vec![u1[piece], a + b * (omega * t + phi).sin()],
        )
    })
    .unwrap()
}
