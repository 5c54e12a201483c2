//! Scalar calculus-of-variations problems `min ∫ F(t, x, ẋ) dt` with fixed
//! endpoints: Euler–Lagrange residuals, closed-form extremals for integrands
//! quadratic in `ẋ`, and the field-of-extremals sufficiency check.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{BinaryOp, CompiledExpr, Expr, UnaryOp};
use crate::model::{central_derivative, Interval, Problem, SampleRegion, Trajectory, TIME};
use crate::quadrature::uniform_grid;
use crate::{Error, Result};

/// Name of the family parameter in [`ExtremalFamily::xi`].
pub const BETA: &str = "beta";

/// Points on the grid returned by [`solve_el_quadratic`].
pub const EXTREMAL_POINTS: usize = 201;

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalProblem {
    pub state_name: String,
    pub t0: f64,
    pub t1: f64,
    /// `F` over `t`, the state and its derivative (see [`Self::derivative_name`]).
    pub integrand: Expr,
    pub boundary: (f64, f64),
}

impl VariationalProblem {
    /// `x` → `xdot`.
    pub fn derivative_name(&self) -> String {
        format!("{}dot", self.state_name)
    }

    /// `[t, x, xdot]`.
    pub fn symbols(&self) -> [String; 3] {
        [
            TIME.to_owned(),
            self.state_name.clone(),
            self.derivative_name(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.to_control_problem().validate()?;
        if self.state_name == BETA {
            return Err(Error::InvalidProblem(format!("`{BETA}` is reserved")));
        }
        Ok(())
    }

    /// The same problem in Lagrange form: one state `x`, one unbounded
    /// control named `xdot`, `ẋ = xdot`, `L = F`.
    pub fn to_control_problem(&self) -> Problem {
        Problem {
            states: vec![self.state_name.clone()],
            controls: vec![self.derivative_name()],
            t0: self.t0,
            t1: self.t1,
            lagrangian: self.integrand.clone(),
            dynamics: vec![Expr::var(&self.derivative_name())],
            boundary: vec![self.boundary],
            control_bounds: vec![None],
        }
    }
}

/// `ξ(t, β)` with the parameter value `β*` selecting the extremal through
/// the boundary data.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremalFamily {
    pub xi: Expr,
    pub beta_star: f64,
}

struct Partials {
    f_xdot: CompiledExpr,
    f_x: CompiledExpr,
}

impl Partials {
    fn new(vp: &VariationalProblem) -> Result<Self> {
        let layout = vp.symbols();
        Ok(Partials {
            f_xdot: vp.integrand.diff(&layout[2]).compile(&layout)?,
            f_x: vp.integrand.diff(&layout[1]).compile(&layout)?,
        })
    }
}

/// Max over interior nodes of `|d/dt F_ẋ − F_x|` along the state series of
/// `x_traj`, with `ẋ` and the outer time derivative both taken by central
/// differences. The two end nodes on each side are skipped.
pub fn el_residual(vp: &VariationalProblem, x_traj: &Trajectory) -> Result<f64> {
    if x_traj.len() < 5 {
        return Err(Error::InvalidTrajectory(
            "need at least 5 grid points".into(),
        ));
    }
    if x_traj.n_states() != 1 {
        return Err(Error::InvalidTrajectory("expected a scalar state".into()));
    }
    let partials = Partials::new(vp)?;
    residual_along(&partials, x_traj.grid(), &x_traj.state_series(0))
}

fn residual_along(partials: &Partials, grid: &[f64], x: &[f64]) -> Result<f64> {
    let n = grid.len();
    let xdot: Vec<f64> = (0..n)
        .map(|k| {
            if k == 0 || k == n - 1 {
                f64::NAN
            } else {
                central_derivative(grid, x, k)
            }
        })
        .collect();
    let p: Vec<f64> = (1..n - 1)
        .map(|k| partials.f_xdot.eval(&[grid[k], x[k], xdot[k]]))
        .collect::<Result<_, _>>()?;
    let mut worst: f64 = 0.0;
    // nodes whose neighbours both have a central ẋ
    for k in 2..n - 2 {
        let p = &p[k - 2..=k];
        let g = &grid[k - 1..=k + 1];
        let dp = central_derivative(g, p, 1);
        let fx = partials.f_x.eval(&[grid[k], x[k], xdot[k]])?;
        worst = worst.max((dp - fx).abs());
    }
    Ok(worst)
}

/// Exponents of `(t, x, ẋ)`.
type Monomial = [u32; 3];
type Poly = BTreeMap<Monomial, f64>;

const MAX_POWER: u32 = 8;

fn poly_const(c: f64) -> Poly {
    Poly::from([([0, 0, 0], c)])
}

fn poly_add(mut a: Poly, b: Poly, sign: f64) -> Poly {
    for (m, c) in b {
        *a.entry(m).or_insert(0.0) += sign * c;
    }
    a
}

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ma, ca) in a {
        for (mb, cb) in b {
            let m = [ma[0] + mb[0], ma[1] + mb[1], ma[2] + mb[2]];
            *out.entry(m).or_insert(0.0) += ca * cb;
        }
    }
    out
}

fn to_poly(e: &Expr, names: &[String; 3]) -> std::result::Result<Poly, String> {
    if e.free_vars().is_empty() {
        let c = e
            .eval(&Default::default())
            .map_err(|err| format!("constant subexpression {e}: {err}"))?;
        return Ok(poly_const(c));
    }
    match e {
        Expr::Const(c) => Ok(poly_const(*c)),
        Expr::Var(v) => {
            let i = names
                .iter()
                .position(|n| n == v)
                .ok_or_else(|| format!("unexpected symbol `{v}`"))?;
            let mut m = [0; 3];
            m[i] = 1;
            Ok(Poly::from([(m, 1.0)]))
        }
        Expr::Unary(UnaryOp::Neg, a) => Ok(poly_add(Poly::new(), to_poly(a, names)?, -1.0)),
        Expr::Unary(op, _) => Err(format!(
            "`{}` is not polynomial",
            op.function_name().unwrap_or("-")
        )),
        Expr::Binary(op, a, b) => {
            let pa = to_poly(a, names)?;
            match op {
                BinaryOp::Add => Ok(poly_add(pa, to_poly(b, names)?, 1.0)),
                BinaryOp::Sub => Ok(poly_add(pa, to_poly(b, names)?, -1.0)),
                BinaryOp::Mul => Ok(poly_mul(&pa, &to_poly(b, names)?)),
                BinaryOp::Div => match b.free_vars().is_empty() {
                    true => {
                        let d = b.eval(&Default::default()).map_err(|err| err.to_string())?;
                        if d == 0.0 {
                            return Err("division by zero".into());
                        }
                        Ok(poly_add(Poly::new(), pa, 1.0 / d))
                    }
                    false => Err(format!("division by non-constant {b}")),
                },
                BinaryOp::Pow => {
                    let k = match b.free_vars().is_empty() {
                        true => b.eval(&Default::default()).map_err(|err| err.to_string())?,
                        false => return Err(format!("non-constant exponent {b}")),
                    };
                    if k.fract() != 0.0 || !(0.0..=MAX_POWER as f64).contains(&k) {
                        return Err(format!("exponent {k} is not a small non-negative integer"));
                    }
                    let mut out = poly_const(1.0);
                    for _ in 0..k as u32 {
                        out = poly_mul(&out, &pa);
                    }
                    Ok(out)
                }
            }
        }
    }
}

/// `F = α·ẋ² + g(t)·ẋ + h(t)·x + k(t)`, polynomials stored by ascending
/// power of `t`.
#[derive(Clone, Debug, PartialEq)]
struct QuadraticIntegrand {
    alpha: f64,
    g: Vec<f64>,
    h: Vec<f64>,
}

const MAX_T_DEGREE: u32 = 4;

fn classify(vp: &VariationalProblem) -> Result<QuadraticIntegrand> {
    let unsupported = |m: String| Error::UnsupportedStructure(m);
    let poly = to_poly(&vp.integrand, &vp.symbols()).map_err(unsupported)?;
    let mut alpha = 0.0;
    let mut g = vec![0.0; MAX_T_DEGREE as usize + 1];
    let mut h = vec![0.0; MAX_T_DEGREE as usize + 1];
    for ([dt, dx, dxd], c) in poly {
        if c == 0.0 {
            continue;
        }
        if dt > MAX_T_DEGREE {
            return Err(unsupported(format!(
                "degree {dt} in t exceeds {MAX_T_DEGREE}"
            )));
        }
        match (dx, dxd) {
            (0, 2) if dt == 0 => alpha += c,
            (0, 2) => {
                return Err(unsupported(
                    "the coefficient of xdot^2 must be constant".into(),
                ))
            }
            (0, 1) => g[dt as usize] += c,
            (1, 0) => h[dt as usize] += c,
            (0, 0) => {}
            _ => {
                return Err(unsupported(format!(
                    "term of degree {dx} in the state and {dxd} in its derivative"
                )))
            }
        }
    }
    if alpha == 0.0 {
        return Err(unsupported("the integrand has no xdot^2 term".into()));
    }
    Ok(QuadraticIntegrand { alpha, g, h })
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, ci| acc * t + ci)
}

fn poly_expr(coeffs: &[f64], var: &str) -> Expr {
    let mut out: Option<Expr> = None;
    for (k, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let term = match k {
            0 => Expr::constant(c),
            1 => Expr::mul(Expr::constant(c), Expr::var(var)),
            _ => Expr::mul(
                Expr::constant(c),
                Expr::pow(Expr::var(var), Expr::constant(k as f64)),
            ),
        };
        out = Some(match out {
            None => term,
            Some(acc) => Expr::add(acc, term),
        });
    }
    out.unwrap_or(Expr::constant(0.0))
}

/// Closed-form extremal through the boundary data, sampled on
/// [`EXTREMAL_POINTS`] uniform points (`ẋ` in the control column), and the
/// translation family `ξ = extremal + β`, `β* = 0`.
///
/// The Euler–Lagrange equation `2α·ẍ = h(t) − g′(t)` is integrated twice;
/// the integration constants solve a 2×2 linear system.
pub fn solve_el_quadratic(vp: &VariationalProblem) -> Result<(Trajectory, ExtremalFamily)> {
    vp.validate()?;
    let q = classify(vp)?;
    // r = (h − g')/(2α), then the second antiderivative of r
    let mut r = vec![0.0; q.h.len()];
    for k in 0..r.len() {
        let gp = q.g.get(k + 1).map_or(0.0, |c| c * (k + 1) as f64);
        r[k] = (q.h[k] - gp) / (2.0 * q.alpha);
    }
    let mut x = vec![0.0; r.len() + 2];
    for (k, rk) in r.iter().enumerate() {
        x[k + 2] = rk / ((k + 1) * (k + 2)) as f64;
    }
    // c1·t + c2 absorbs the boundary data
    let (t0, t1) = (vp.t0, vp.t1);
    let (xa, xb) = vp.boundary;
    let det = t0 - t1;
    if det == 0.0 || !det.is_finite() {
        return Err(Error::NoExtremal("singular boundary system".into()));
    }
    let ra = xa - poly_eval(&x, t0);
    let rb = xb - poly_eval(&x, t1);
    let c1 = (ra - rb) / det;
    let c2 = (t0 * rb - t1 * ra) / det;
    x[1] += c1;
    x[0] += c2;
    if !x.iter().all(|c| c.is_finite()) {
        return Err(Error::NoExtremal("non-finite integration constants".into()));
    }
    let extremal = poly_expr(&x, TIME);
    let family = ExtremalFamily {
        xi: Expr::add(extremal, Expr::var(BETA)),
        beta_star: 0.0,
    };
    let traj = family_trajectory(&family, vp, family.beta_star, EXTREMAL_POINTS)?;
    Ok((traj, family))
}

/// `ξ(·, β)` and `∂ξ/∂t` on a uniform grid.
fn family_trajectory(
    family: &ExtremalFamily,
    vp: &VariationalProblem,
    beta: f64,
    points: usize,
) -> Result<Trajectory> {
    let layout = [TIME, BETA];
    let xi = family.xi.compile(&layout)?;
    let xi_t = family.xi.diff(TIME).compile(&layout)?;
    let grid = uniform_grid(vp.t0, vp.t1, points);
    let mut states = Vec::with_capacity(points);
    let mut controls = Vec::with_capacity(points);
    for &t in &grid {
        states.push(vec![xi.eval(&[t, beta])?]);
        controls.push(vec![xi_t.eval(&[t, beta])?]);
    }
    Trajectory::new(grid, states, controls)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCheck {
    pub outcome: Outcome,
    /// Extremes of `∂²F/∂ẋ²` over the samples.
    pub min_second_derivative: f64,
    pub max_second_derivative: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyCheck {
    pub passed: bool,
    /// Boundary mismatch of `ξ(·, β*)`.
    pub boundary_mismatch: f64,
    /// Largest Euler–Lagrange residual over `β*` and the sampled `β`.
    pub max_el_residual: f64,
    pub betas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaDerivativeCheck {
    pub passed: bool,
    /// Extremes of `|∂ξ/∂β|` over the samples.
    pub min_abs: f64,
    pub max_abs: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyReport {
    pub convexity: ConvexityCheck,
    pub family_exists: FamilyCheck,
    pub beta_derivative_nonzero: BetaDerivativeCheck,
    /// All three checks passed: `ξ(·, β*)` is an absolute minimizer.
    pub certified: bool,
}

const CONVEXITY_TOL: f64 = 1e-12;
const FAMILY_BOUNDARY_TOL: f64 = 1e-9;
const FAMILY_EL_TOL: f64 = 1e-6;
const BETA_DERIVATIVE_TOL: f64 = 1e-9;
const FAMILY_BETAS: usize = 5;
const FAMILY_POINTS: usize = 201;
/// Sampled `β` are drawn from `β* ± BETA_SPREAD`.
const BETA_SPREAD: f64 = 5.0;

/// Samples the three sufficient conditions: `F` convex in `ẋ`, a family of
/// extremals containing one through the boundary data, and `∂ξ/∂β ≠ 0`.
pub fn sufficiency_check(
    vp: &VariationalProblem,
    family: &ExtremalFamily,
    n_samples: usize,
    seed: u64,
) -> Result<SufficiencyReport> {
    vp.validate()?;
    let fam_layout = [TIME, BETA];
    if let Some(v) = family
        .xi
        .free_vars()
        .iter()
        .find(|v| !fam_layout.contains(&v.as_str()))
    {
        return Err(Error::InvalidProblem(format!(
            "family uses undeclared symbol `{v}`"
        )));
    }
    let layout = vp.symbols();
    let f_xx = vp
        .integrand
        .diff(&layout[2])
        .diff(&layout[2])
        .compile(&layout)?;
    let xi_beta = family.xi.diff(BETA).compile(&fam_layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let time = Interval::new(vp.t0, vp.t1);
    let state_box = SampleRegion::default().state_box;
    let betas = Interval::new(
        family.beta_star - BETA_SPREAD,
        family.beta_star + BETA_SPREAD,
    );

    let (mut lo, mut hi, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0);
    for _ in 0..n_samples {
        let pt = [
            time.sample(&mut rng),
            state_box.sample(&mut rng),
            state_box.sample(&mut rng),
        ];
        if let Ok(v) = f_xx.eval(&pt) {
            lo = lo.min(v);
            hi = hi.max(v);
            n += 1;
        }
    }
    let outcome = if n == 0 {
        Outcome::Inconclusive
    } else if lo >= CONVEXITY_TOL {
        Outcome::Pass
    } else if lo < -CONVEXITY_TOL {
        Outcome::Fail
    } else {
        Outcome::Inconclusive
    };
    let convexity = ConvexityCheck {
        outcome,
        min_second_derivative: lo,
        max_second_derivative: hi,
        samples: n,
    };

    let partials = Partials::new(vp)?;
    let sampled: Vec<f64> = (0..FAMILY_BETAS).map(|_| betas.sample(&mut rng)).collect();
    let mut max_el: f64 = 0.0;
    let mut boundary_mismatch = f64::INFINITY;
    let mut family_ok = true;
    for (i, &beta) in std::iter::once(&family.beta_star)
        .chain(&sampled)
        .enumerate()
    {
        match family_trajectory(family, vp, beta, FAMILY_POINTS).and_then(|tr| {
            Ok((
                residual_along(&partials, tr.grid(), &tr.state_series(0))?,
                tr,
            ))
        }) {
            Ok((res, tr)) => {
                max_el = max_el.max(res);
                if i == 0 {
                    let last = tr.len() - 1;
                    boundary_mismatch = (tr.state(0)[0] - vp.boundary.0)
                        .abs()
                        .max((tr.state(last)[0] - vp.boundary.1).abs());
                }
            }
            Err(_) => family_ok = false,
        }
    }
    let family_exists = FamilyCheck {
        passed: family_ok && boundary_mismatch <= FAMILY_BOUNDARY_TOL && max_el <= FAMILY_EL_TOL,
        boundary_mismatch,
        max_el_residual: max_el,
        betas: sampled,
    };

    let (mut lo, mut hi, mut n) = (f64::INFINITY, 0.0f64, 0);
    for _ in 0..n_samples {
        if let Ok(v) = xi_beta.eval(&[time.sample(&mut rng), betas.sample(&mut rng)]) {
            lo = lo.min(v.abs());
            hi = hi.max(v.abs());
            n += 1;
        }
    }
    let beta_derivative_nonzero = BetaDerivativeCheck {
        passed: n > 0 && lo >= BETA_DERIVATIVE_TOL,
        min_abs: lo,
        max_abs: hi,
        samples: n,
    };

    let certified = convexity.outcome == Outcome::Pass
        && family_exists.passed
        && beta_derivative_nonzero.passed;
    Ok(SufficiencyReport {
        convexity,
        family_exists,
        beta_derivative_nonzero,
        certified,
    })
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::expr::parse;
    use crate::model;

    fn sampled(f: impl Fn(f64) -> f64, points: usize) -> Trajectory {
        Trajectory::from_fn(uniform_grid(0.0, 1.0, points), |t| (vec![f(t)], vec![])).unwrap()
    }

    #[test]
    fn residual_vanishes_on_extremals() {
        for (c1, c2) in [(0.25, 0.0), (-1.0, 3.0), (2.5, -0.7)] {
            let tr = sampled(|t| -t * t / 4.0 + c1 * t + c2, 201);
            assert!(el_residual(&example2(), &tr).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn residual_of_line_for_arc_length_like_integrand() {
        let tr = sampled(|t| 3.0 * t - 1.0, 11);
        assert!(el_residual(&vp("xdot^2", (0.0, 1.0)), &tr).unwrap() < 1e-12);
    }

    #[test]
    fn residual_of_non_extremal() {
        // F_ẋ = 2ẋ + t = 5t along t², F_x = 0
        let tr = sampled(|t| t * t, 201);
        assert!((el_residual(&example2(), &tr).unwrap() - 5.0).abs() < 1e-8);
    }

    #[test]
    fn residual_needs_five_points() {
        let tr = sampled(|t| t, 4);
        assert!(el_residual(&example2(), &tr).is_err());
    }

    #[test]
    fn extremal_of_worked_example() {
        let (tr, fam) = solve_el_quadratic(&example2()).unwrap();
        for k in 0..tr.len() {
            let t = tr.grid()[k];
            assert!((tr.state(k)[0] - (-t * t / 4.0 + t / 4.0)).abs() < 1e-15);
            assert!((tr.control(k)[0] - (-t / 2.0 + 0.25)).abs() < 1e-15);
        }
        assert_eq!(tr.state(0)[0], 0.0);
        assert!(tr.state(tr.len() - 1)[0].abs() <= 1e-12);
        assert!(el_residual(&example2(), &tr).unwrap() <= 1e-8);
        assert_eq!(fam.beta_star, 0.0);
        assert_eq!(fam.xi.diff(BETA), Expr::constant(1.0));
        // cost −1/48
        let c = model::cost(&example2().to_control_problem(), &tr).unwrap();
        assert!((c + 1.0 / 48.0).abs() < 1e-12);
    }

    #[test]
    fn extremal_is_straight_line() {
        let (tr, _) = solve_el_quadratic(&vp("xdot^2", (0.0, 1.0))).unwrap();
        for k in 0..tr.len() {
            assert!((tr.state(k)[0] - tr.grid()[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn extremal_with_state_term() {
        // 2ẍ = 1 → x = t²/4 + c1 t + c2
        let v = vp("xdot^2 + x", (1.0, 2.0));
        let (tr, _) = solve_el_quadratic(&v).unwrap();
        assert!((tr.state(0)[0] - 1.0).abs() <= 1e-12);
        assert!((tr.state(tr.len() - 1)[0] - 2.0).abs() <= 1e-12);
        assert!(el_residual(&v, &tr).unwrap() <= 1e-8);
    }

    #[test]
    fn extremal_on_shifted_interval() {
        let mut v = vp("3*xdot^2 - t^3*xdot + (t^2 - 1)*x + exp(1)*t", (-1.0, 0.5));
        v.t0 = 1.0;
        v.t1 = 2.5;
        let (tr, fam) = solve_el_quadratic(&v).unwrap();
        assert!((tr.state(0)[0] + 1.0).abs() <= 1e-12);
        assert!((tr.state(tr.len() - 1)[0] - 0.5).abs() <= 1e-12);
        // 6ẍ − 3t² = t² − 1
        let xdd = fam.xi.diff("t").diff("t");
        for t in [1.0, 1.3, 2.0, 2.5] {
            let b = crate::expr::Binding::new().with("t", t).with("beta", 0.0);
            assert!((xdd.eval(&b).unwrap() - (4.0 * t * t - 1.0) / 6.0).abs() < 1e-12);
        }
        // quartic extremal: finite differences are only second-order accurate
        assert!(el_residual(&v, &tr).unwrap() <= 1e-3);
    }

    #[test]
    fn rejects_unsupported_structure() {
        for src in [
            "exp(xdot)",
            "x*xdot",
            "t*xdot^2",
            "x^2 + xdot^2",
            "t + x",
            "t^5*xdot + xdot^2",
            "xdot/x",
        ] {
            let err = solve_el_quadratic(&vp(src, (0.0, 1.0))).unwrap_err();
            assert!(
                matches!(err, Error::UnsupportedStructure(_)),
                "{src}: {err}"
            );
        }
    }

    #[test]
    fn accepts_structure_after_cancellation() {
        assert!(
            solve_el_quadratic(&vp("xdot^2 + x*xdot - xdot*x + (2*t)^2/2", (0.0, 1.0))).is_ok()
        );
    }

    #[test]
    fn worked_example_is_certified() {
        let (_, fam) = solve_el_quadratic(&example2()).unwrap();
        let r = sufficiency_check(&example2(), &fam, 200, 4).unwrap();
        assert!(r.certified, "{r:?}");
        assert_eq!(r.convexity.min_second_derivative, 2.0);
        assert_eq!(r.convexity.max_second_derivative, 2.0);
        assert_eq!(r.beta_derivative_nonzero.min_abs, 1.0);
        assert_eq!(r.beta_derivative_nonzero.max_abs, 1.0);
    }

    #[test]
    fn convexity_outcomes() {
        let fam = ExtremalFamily {
            xi: parse("t + beta", &["t", "beta"]).unwrap(),
            beta_star: 0.0,
        };
        let r = sufficiency_check(&vp("xdot^2", (0.0, 1.0)), &fam, 50, 1).unwrap();
        assert_eq!(r.convexity.outcome, Outcome::Pass);
        assert!(r.certified);
        let r = sufficiency_check(&vp("-xdot^2", (0.0, 1.0)), &fam, 50, 1).unwrap();
        assert_eq!(r.convexity.outcome, Outcome::Fail);
        assert_eq!(r.convexity.min_second_derivative, -2.0);
        assert!(!r.certified);
        let r = sufficiency_check(&vp("xdot", (0.0, 1.0)), &fam, 50, 1).unwrap();
        assert_eq!(r.convexity.outcome, Outcome::Inconclusive);
    }

    #[test]
    fn family_missing_boundary_fails() {
        let fam = ExtremalFamily {
            xi: parse("t + beta", &["t", "beta"]).unwrap(),
            beta_star: 0.5,
        };
        let r = sufficiency_check(&vp("xdot^2", (0.0, 1.0)), &fam, 50, 1).unwrap();
        assert!(!r.family_exists.passed);
        assert!((r.family_exists.boundary_mismatch - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_beta_derivative_fails() {
        let fam = ExtremalFamily {
            xi: parse("t + 0*beta", &["t", "beta"]).unwrap(),
            beta_star: 0.0,
        };
        let r = sufficiency_check(&vp("xdot^2", (0.0, 1.0)), &fam, 50, 1).unwrap();
        assert!(!r.beta_derivative_nonzero.passed);
        assert!(!r.certified);
    }

    #[test]
    fn control_form_matches() {
        let p = example2().to_control_problem();
        p.validate().unwrap();
        assert_eq!(p.symbols(), ["t", "x", "xdot"]);
    }
}
