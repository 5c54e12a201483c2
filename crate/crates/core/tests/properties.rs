mod support;

use absmin_core::calcvar::{self, ExtremalFamily, VariationalProblem, BETA};
use absmin_core::expr::{parse, Expr};
use absmin_core::invariance::{self, VerifyOptions};
use absmin_core::model::{self, CandidateControl, Interval, Trajectory};
use absmin_core::numcheck::{minimize, FnObjective, MinimizeOptions};
use absmin_core::quadrature::{simpson, trapezoid, uniform_grid};
use absmin_core::stsolver::{self, SolveOptions};
use proptest::prelude::*;
use support::*;

fn poly_str(c: &[f64], var: &str) -> String {
    c.iter()
        .enumerate()
        .map(|(k, ck)| format!("({ck})*{var}^{k}"))
        .collect::<Vec<_>>()
        .join(" + ")
}

proptest! {
    #![proptest_config(config(1000))]

    #[test]
    fn derivative_matches_finite_difference(
        e in arb_expr(&EXPR_VARS),
        point in arb_point(3),
        k in 0usize..3,
    ) {
        check_derivative(&e, &EXPR_VARS, &point, k)?;
    }
}

proptest! {
    #![proptest_config(config(500))]

    #[test]
    fn simplify_preserves_value(e in arb_expr(&EXPR_VARS), point in arb_point(3)) {
        let b = binding(&EXPR_VARS, &point);
        let Ok(v) = e.eval(&b) else { return Err(TestCaseError::reject("undefined")) };
        prop_assert_eq!(e.simplify_lite().eval(&b).unwrap(), v);
    }

    #[test]
    fn print_parse_round_trip(e in arb_expr(&EXPR_VARS), point in arb_point(3)) {
        let printed = e.to_string();
        let back = parse(&printed, &EXPR_VARS).unwrap();
        let b = binding(&EXPR_VARS, &point);
        match (e.eval(&b), back.eval(&b)) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y, "{}", printed),
            (Err(x), Err(y)) => prop_assert_eq!(x, y),
            (x, y) => prop_assert!(false, "{printed}: {x:?} vs {y:?}"),
        }
    }

    #[test]
    fn compiled_matches_tree(e in arb_expr(&EXPR_VARS), point in arb_point(3)) {
        let b = binding(&EXPR_VARS, &point);
        let c = e.compile(&EXPR_VARS).unwrap();
        match (e.eval(&b), c.eval(&point)) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (Err(_), Err(_)) => {}
            (x, y) => prop_assert!(false, "{e}: {x:?} vs {y:?}"),
        }
    }
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn transform_round_trip_example_family(traj in arb_trajectory(41), s in -2.0..2.0f64) {
        check_round_trip(&example1_family(), &traj, s, 1e-9)?;
    }

    #[test]
    fn transform_round_trip_coupled_families(traj in arb_trajectory(41), s in -2.0..2.0f64, which in 0usize..2) {
        check_round_trip(&coupled_families()[which], &traj, s, 1e-9)?;
    }
}

proptest! {
    #![proptest_config(config(50))]

    /// Halving the step: trapezoid error shrinks by 4, Simpson (behind
    /// `model::cost` on odd grids) by 16.
    #[test]
    fn quadrature_richardson_ratios(
        a in -1.0..1.0f64,
        b in 0.5..1.5f64,
        w in arb_wave(),
        eps in 0.0..0.2f64,
    ) {
        let p = example1();
        let traj_on = |points: usize| {
            Trajectory::from_fn(uniform_grid(0.0, 1.0, points), |t| {
                (vec![0.0, 0.0], vec![a + b * t + eps * w.at(t), 0.5])
            })
            .unwrap()
        };
        let values = |tr: &Trajectory| model::lagrangian_samples(&p, tr).unwrap();
        let grids = [17, 33, 65];
        let trs: Vec<Trajectory> = grids.iter().map(|&n| traj_on(n)).collect();
        let trap: Vec<f64> = trs.iter().map(|tr| trapezoid(tr.grid(), &values(tr))).collect();
        let ratio = (trap[0] - trap[1]) / (trap[1] - trap[2]);
        prop_assert!((ratio - 4.0).abs() <= 1.0, "trapezoid ratio {ratio}");

        let cost: Vec<f64> = trs.iter().map(|tr| model::cost(&p, tr).unwrap()).collect();
        let simp: Vec<f64> = trs.iter().map(|tr| simpson(tr.grid(), &values(tr))).collect();
        prop_assert_eq!(&cost, &simp);
        let ratio = (cost[0] - cost[1]) / (cost[1] - cost[2]);
        prop_assert!((ratio - 16.0).abs() <= 4.0, "simpson ratio {ratio}");
    }
}

proptest! {
    #![proptest_config(config(100))]

    /// `u1` piecewise constant, `u2` smooth, both in the box; states
    /// integrated from the dynamics, right endpoint free. The cost difference
    /// is the gauge difference at the actual endpoints. (Only `u2` enters the
    /// difference, so its smoothness keeps the quadrature error small.)
    #[test]
    fn value_relation_under_the_family(
        u1 in proptest::collection::vec(-1.0..1.0f64, 6),
        a in -0.5..0.5f64,
        b in -0.5..0.5f64,
        omega in 0.5..6.0f64,
        phi in 0.0..6.3f64,
        s in -2.0..2.0f64,
    ) {
        let p = example1();
        let f = example1_family();
        let traj = mixed_example1(&u1, (a, b, omega, phi));
        let ps = model::transformed_problem(&p, &f, s).unwrap();
        let image = model::apply_transform(&f, &traj, s).unwrap();
        let lhs = model::cost(&ps, &image).unwrap() - model::cost(&p, &traj).unwrap();
        let last = traj.len() - 1;
        let g = invariance::gauge_difference(&p, &f, (0.0, traj.state(0)), (1.0, traj.state(last)), s).unwrap();
        // gauge s²t + 2s·x2 evaluated by hand
        let by_hand = s * s + 2.0 * s * traj.state(last)[1];
        prop_assert!((g - by_hand).abs() <= 1e-12);
        prop_assert!((lhs - g).abs() <= 1e-4, "{lhs} vs {g}");
    }

    #[test]
    fn admissible_pairs_shift_by_gauge_offset(
        u1 in proptest::collection::vec(-0.6..0.6f64, PIECES - 1),
        s in -2.0..2.0f64,
    ) {
        let Some(traj) = admissible_example1(&u1) else {
            return Err(TestCaseError::reject("last piece outside the box"));
        };
        let p = example1();
        let f = example1_family();
        let last = traj.len() - 1;
        prop_assert!((traj.state(last)[0] - 2.0).abs() < 1e-12 && (traj.state(last)[1] - 1.0).abs() < 1e-12);
        let ps = model::transformed_problem(&p, &f, s).unwrap();
        let image = model::apply_transform(&f, &traj, s).unwrap();
        let diff = model::cost(&ps, &image).unwrap() - model::cost(&p, &traj).unwrap();
        prop_assert!((diff - (s * s + 2.0 * s)).abs() <= 1e-4);
        prop_assert!((invariance::gauge_offset(&p, &f, s).unwrap() - (s * s + 2.0 * s)).abs() <= 1e-12);
    }
}

#[test]
fn verify_is_exact_over_wide_parameter_range() {
    let opts = VerifyOptions {
        s_range: Interval::new(-10.0, 10.0),
        n_samples: 500,
        ..VerifyOptions::default()
    };
    let r = invariance::verify(&example1(), &example1_family(), &opts).unwrap();
    assert!(r.lagrangian_max_residual <= 1e-9);
    assert!(r.dynamics_max_residual.iter().all(|d| *d <= 1e-9));
}

#[test]
fn verify_is_deterministic() {
    let opts = VerifyOptions {
        seed: 99,
        ..VerifyOptions::default()
    };
    let run = || {
        serde_json::to_string(&invariance::verify(&example1(), &example1_family(), &opts).unwrap())
            .unwrap()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(config(20))]

    /// Right endpoint `(b + 1, b)`: the candidate `u ≡ 0` is admissible for
    /// `s = −b`, the minimizer is `u = (0, b)` and the minimum `b²`.
    #[test]
    fn solver_on_shifted_endpoints(b in -1.0..1.0f64) {
        let mut p = example1();
        p.boundary = vec![(0.0, b + 1.0), (0.0, b)];
        let cand = CandidateControl::new(vec![Expr::constant(0.0); 2]).unwrap();
        let sol = stsolver::solve(&p, &example1_family(), &cand, &SolveOptions::default()).unwrap();
        prop_assert!((sol.s_star + b).abs() <= 1e-8, "{}", sol.s_star);
        prop_assert!((sol.minimum_value - b * b).abs() <= 1e-8);
        let adm = &sol.certificates.admissibility;
        prop_assert!(adm.dynamics_residual <= 1e-6 && adm.boundary_mismatch <= 1e-6 && adm.box_violation <= 1e-9);
        prop_assert!((model::cost(&p, &sol.minimizer).unwrap() - sol.minimum_value).abs() <= 1e-4);
        let back = model::invert_transform(&example1_family(), &sol.transformed_trajectory, sol.s_star).unwrap();
        prop_assert_eq!(back, sol.minimizer.clone());
        for k in 0..sol.minimizer.len() {
            let t = sol.minimizer.grid()[k];
            let c = sol.minimizer.control(k);
            prop_assert!(c[0].abs() <= 1e-8 && (c[1] - b).abs() <= 1e-8);
            let x = sol.minimizer.state(k);
            prop_assert!((x[0] - (1.0 + b) * t).abs() <= 1e-8 && (x[1] - b * t).abs() <= 1e-8);
        }
    }
}

#[test]
fn solve_is_deterministic() {
    let cand = CandidateControl::new(vec![Expr::constant(0.0); 2]).unwrap();
    let opts = SolveOptions::default().with_seed(3);
    let run = || {
        serde_json::to_string(
            &stsolver::solve(&example1(), &example1_family(), &cand, &opts).unwrap(),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}

fn variational(integrand: &str, t0: f64, t1: f64, boundary: (f64, f64)) -> VariationalProblem {
    VariationalProblem {
        state_name: "x".into(),
        t0,
        t1,
        integrand: parse(integrand, &["t", "x", "xdot"]).unwrap(),
        boundary,
    }
}

fn arb_quadratic_integrand(with_state: bool) -> impl Strategy<Value = String> {
    (
        prop_oneof![0.5..3.0f64, -3.0..-0.5f64],
        proptest::collection::vec(-2.0..2.0f64, 3),
        proptest::collection::vec(-2.0..2.0f64, 3),
        proptest::collection::vec(-2.0..2.0f64, 2),
    )
        .prop_map(move |(alpha, g, h, k)| {
            let mut s = format!(
                "({alpha})*xdot^2 + ({})*xdot + {}",
                poly_str(&g, "t"),
                poly_str(&k, "t")
            );
            if with_state {
                s += &format!(" + ({})*x", poly_str(&h, "t"));
            }
            s
        })
}

proptest! {
    #![proptest_config(config(100))]

    #[test]
    fn extremal_hits_boundary(
        integrand in arb_quadratic_integrand(true),
        t0 in -2.0..1.0f64,
        len in 0.2..3.0f64,
        xa in -3.0..3.0f64,
        xb in -3.0..3.0f64,
    ) {
        let vp = variational(&integrand, t0, t0 + len, (xa, xb));
        let (tr, fam) = calcvar::solve_el_quadratic(&vp).unwrap();
        let last = tr.len() - 1;
        prop_assert!((tr.state(0)[0] - xa).abs() <= 1e-12);
        prop_assert!((tr.state(last)[0] - xb).abs() <= 1e-12);
        prop_assert_eq!(fam.beta_star, 0.0);
    }

    /// Without `x` in the integrand every translate of an extremal is one.
    #[test]
    fn extremals_translate(
        integrand in arb_quadratic_integrand(false),
        xa in -3.0..3.0f64,
        xb in -3.0..3.0f64,
        beta in -5.0..5.0f64,
    ) {
        let vp = variational(&integrand, 0.0, 1.0, (xa, xb));
        let (_, fam) = calcvar::solve_el_quadratic(&vp).unwrap();
        let xi = fam.xi.compile(&["t", BETA]).unwrap();
        let tr = Trajectory::from_fn(uniform_grid(0.0, 1.0, 201), |t| (vec![xi.eval(&[t, beta]).unwrap()], vec![])).unwrap();
        prop_assert!(calcvar::el_residual(&vp, &tr).unwrap() <= 1e-6);
    }

    #[test]
    fn second_partial_matches_difference_of_first(
        e in arb_expr(&["t", "x", "xdot"]),
        point in arb_point(3),
    ) {
        let first = e.diff("xdot");
        check_derivative(&first, &["t", "x", "xdot"], &point, 2)?;
        let b = binding(&["t", "x", "xdot"], &point);
        if let (Ok(a), Ok(c)) = (first.diff("xdot").eval(&b), e.diff("xdot").diff("xdot").eval(&b)) {
            prop_assert_eq!(a, c);
        }
    }

    #[test]
    fn sufficiency_is_deterministic(seed in 0u64..1000) {
        let vp = variational("xdot^2 + t*xdot", 0.0, 1.0, (0.0, 0.0));
        let fam = ExtremalFamily { xi: parse("-t^2/4 + t/4 + beta", &["t", BETA]).unwrap(), beta_star: 0.0 };
        let a = calcvar::sufficiency_check(&vp, &fam, 50, seed).unwrap();
        let b = calcvar::sufficiency_check(&vp, &fam, 50, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.certified);
    }

    /// Minimizer output always lies in the box, exactly.
    #[test]
    fn minimize_stays_in_box(
        centre in proptest::collection::vec(-3.0..3.0f64, 3),
        lo in proptest::collection::vec(-2.0..0.0f64, 3),
        width in proptest::collection::vec(0.0..2.0f64, 3),
    ) {
        let c = centre.clone();
        let obj = FnObjective::new(3, move |u: &[f64]| Ok(u.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum()));
        let bounds: Vec<Option<Interval>> = lo.iter().zip(&width).map(|(l, w)| Some(Interval::new(*l, l + w))).collect();
        let m = minimize(&obj, &bounds, &MinimizeOptions { restarts: 1, ..MinimizeOptions::default() }).unwrap();
        for ((u, b), c) in m.u.iter().zip(&bounds).zip(&centre) {
            let b = b.unwrap();
            prop_assert!(b.lo <= *u && *u <= b.hi, "{u} {b:?}");
            prop_assert!((u - b.clamp(*c)).abs() <= 1e-6);
        }
    }
}
