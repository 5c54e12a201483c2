//! Invariance-embedding solver.
//!
//! Given a verified symmetry family and an inspection candidate for the
//! transformed controls, find the family member in which that candidate is
//! admissible, then map its trajectory back through the inverse
//! transformation. The minimum of the original problem is the transformed
//! cost minus the gauge offset `G(s*)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{CompiledExpr, Expr};
use crate::invariance::{self, InvarianceReport, Verdict, VerifyOptions};
use crate::model::{
    self, Admissibility, AdmissibilityTolerances, CandidateControl, Interval, Problem,
    SampleRegion, Trajectory, TransformFamily, TIME,
};
use crate::ode::Rk4;
use crate::quadrature::uniform_grid;
use crate::{Error, Result};

/// Outcome of the pointwise lower-bound certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCheck {
    pub passed: bool,
    /// Smallest `L` seen over random points of the domain.
    pub min_lagrangian: f64,
    /// Largest `|L(t, x, cand(t))|` seen.
    pub max_candidate_lagrangian: f64,
    pub samples: usize,
    pub tolerance: f64,
    /// `(t, x, u)` of the sample that decided a failure.
    pub worst_sample: Option<(f64, Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub region: SampleRegion,
}

impl Default for LowerBoundOptions {
    fn default() -> Self {
        LowerBoundOptions {
            n_samples: 1000,
            seed: 0,
            tolerance: 1e-9,
            region: SampleRegion::default(),
        }
    }
}

fn eval_candidate(cand: &[CompiledExpr], t: f64) -> Result<Vec<f64>> {
    cand.iter().map(|c| Ok(c.eval(&[t])?)).collect()
}

/// Certifies (at sampling confidence) that `L ≥ 0` everywhere and that the
/// candidate attains `L = 0`, so a zero-cost candidate is a global minimizer
/// of whichever family member it is admissible for.
pub fn check_lower_bound(
    p: &Problem,
    cand: &CandidateControl,
    n_samples: usize,
    seed: u64,
) -> Result<LowerBoundCheck> {
    check_lower_bound_with(
        p,
        cand,
        &LowerBoundOptions {
            n_samples,
            seed,
            ..LowerBoundOptions::default()
        },
    )
}

pub fn check_lower_bound_with(
    p: &Problem,
    cand: &CandidateControl,
    opts: &LowerBoundOptions,
) -> Result<LowerBoundCheck> {
    if cand.controls.len() != p.n_controls() {
        return Err(Error::InvalidProblem(format!(
            "candidate has {} controls, problem has {}",
            cand.controls.len(),
            p.n_controls()
        )));
    }
    let l = p.compiled_lagrangian()?;
    let c = cand.compile()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut min_l = f64::INFINITY;
    let mut max_c: f64 = 0.0;
    let mut samples = 0;
    let mut worst = None;
    let mut worst_score = 0.0;
    let mut vals = vec![0.0; 1 + p.n_states() + p.n_controls()];
    let n = p.n_states();
    for _ in 0..opts.n_samples {
        let (t, x, u) = p.sample_point(&opts.region, &mut rng);
        vals[0] = t;
        vals[1..1 + n].copy_from_slice(&x);
        vals[1 + n..].copy_from_slice(&u);
        let Ok(lv) = l.eval(&vals) else { continue };
        let Ok(cu) = eval_candidate(&c, t) else {
            continue;
        };
        vals[1 + n..].copy_from_slice(&cu);
        let Ok(cv) = l.eval(&vals) else { continue };
        samples += 1;
        min_l = min_l.min(lv);
        max_c = max_c.max(cv.abs());
        let score = (-lv).max(cv.abs());
        if score > opts.tolerance && score > worst_score {
            worst_score = score;
            worst = Some(if -lv >= cv.abs() {
                (t, x, u)
            } else {
                (t, x, cu)
            });
        }
    }
    Ok(LowerBoundCheck {
        passed: samples > 0 && min_l >= -opts.tolerance && max_c <= opts.tolerance,
        min_lagrangian: min_l,
        max_candidate_lagrangian: max_c,
        samples,
        tolerance: opts.tolerance,
        worst_sample: worst,
    })
}

/// Result of integrating the transformed system under the candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    /// Per state `|x_i^s(t1) − mapped right boundary|`.
    pub endpoint_mismatch: Vec<f64>,
    /// Largest distance of the candidate outside the transformed control box.
    pub bound_violation: f64,
    pub trajectory: Trajectory,
}

impl Shot {
    pub fn mismatch_norm(&self) -> f64 {
        self.endpoint_mismatch
            .iter()
            .map(|m| m * m)
            .sum::<f64>()
            .sqrt()
    }
}

fn require_identity_time(f: &TransformFamily) -> Result<()> {
    if f.time_map.simplify_lite() != Expr::var(TIME) {
        return Err(Error::Unsupported(format!(
            "the solver needs t^s = t, got {}",
            f.time_map
        )));
    }
    Ok(())
}

/// Integrates `ẋ = φ(t, x, cand(t))` with `n_steps` RK4 steps from the
/// transformed left boundary of family member `s`.
pub fn shoot(
    p: &Problem,
    f: &TransformFamily,
    cand: &CandidateControl,
    s: f64,
    n_steps: usize,
) -> Result<Shot> {
    require_identity_time(f)?;
    if n_steps == 0 {
        return Err(Error::InvalidProblem(
            "need at least one integration step".into(),
        ));
    }
    let ps = model::transformed_problem(p, f, s)?;
    let phi = ps.compiled_dynamics()?;
    let c = cand.compile()?;
    let n = ps.n_states();
    let grid = uniform_grid(ps.t0, ps.t1, n_steps + 1);
    let h = (ps.t1 - ps.t0) / n_steps as f64;
    let mut vals = vec![0.0; 1 + n + ps.n_controls()];
    let mut rhs = |t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
        vals[0] = t;
        vals[1..1 + n].copy_from_slice(x);
        for (slot, cj) in vals[1 + n..].iter_mut().zip(&c) {
            *slot = cj.eval(&[t])?;
        }
        for (d, e) in dx.iter_mut().zip(&phi) {
            *d = e.eval(&vals)?;
        }
        Ok(())
    };
    let mut rk = Rk4::new(n);
    let mut x: Vec<f64> = ps.boundary.iter().map(|b| b.0).collect();
    let mut states = Vec::with_capacity(grid.len());
    let mut controls = Vec::with_capacity(grid.len());
    let mut bound_violation: f64 = 0.0;
    for (k, &t) in grid.iter().enumerate() {
        let u = eval_candidate(&c, t)?;
        for (b, uj) in ps.control_bounds.iter().zip(&u) {
            if let Some(b) = b {
                bound_violation = bound_violation.max(b.excess(*uj));
            }
        }
        states.push(x.clone());
        controls.push(u);
        if k + 1 < grid.len() {
            rk.step(&mut rhs, t, &mut x, h)?;
        }
    }
    let endpoint_mismatch = ps
        .boundary
        .iter()
        .zip(&states[states.len() - 1])
        .map(|(b, xe)| (xe - b.1).abs())
        .collect();
    Ok(Shot {
        endpoint_mismatch,
        bound_violation,
        trajectory: Trajectory::new(grid, states, controls)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterOptions {
    pub s_range: Interval,
    pub n_steps: usize,
    pub tolerance: f64,
    /// Uniform coarse-scan nodes over `s_range`.
    pub scan_nodes: usize,
}

impl Default for ParameterOptions {
    fn default() -> Self {
        ParameterOptions {
            s_range: Interval::new(-2.0, 2.0),
            n_steps: 200,
            tolerance: 1e-9,
            scan_nodes: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSolution {
    pub s_star: f64,
    pub mismatch_norm: f64,
    pub bound_violation: f64,
    /// Further admissible parameters, when the root is not unique.
    pub other_roots: Vec<f64>,
}

const GOLDEN_ITERS: usize = 200;

/// Golden-section minimization of `g` on `[a, b]`.
fn golden_min<G: FnMut(f64) -> f64>(mut g: G, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..GOLDEN_ITERS {
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    if gc <= gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

/// Finds `s*` where the candidate hits the transformed right boundary
/// (`‖mismatch‖ ≤ tol`) without leaving the transformed control box.
///
/// Scans `s_range` on a uniform grid, refines every local minimum of the
/// mismatch norm by golden-section search, and returns the admissible root of
/// smallest `|s|`.
pub fn solve_parameter(
    p: &Problem,
    f: &TransformFamily,
    cand: &CandidateControl,
    opts: &ParameterOptions,
) -> Result<ParameterSolution> {
    let (lo, hi) = (opts.s_range.lo, opts.s_range.hi);
    if !(lo < hi) || opts.scan_nodes < 2 {
        return Err(Error::InvalidProblem("empty parameter range".into()));
    }
    let eval = |s: f64| -> Result<(f64, f64)> {
        let shot = shoot(p, f, cand, s, opts.n_steps)?;
        Ok((shot.mismatch_norm(), shot.bound_violation))
    };
    let norm = |s: f64| match eval(s) {
        Ok((m, _)) if m.is_finite() => m,
        _ => f64::INFINITY,
    };
    let nodes = uniform_grid(lo, hi, opts.scan_nodes);
    let values: Vec<f64> = nodes.iter().map(|&s| norm(s)).collect();
    let mut best = (f64::NAN, f64::INFINITY);
    let mut roots: Vec<(f64, f64, f64)> = Vec::new();
    let mut consider = |s: f64, roots: &mut Vec<(f64, f64, f64)>| -> Result<()> {
        let (m, bv) = match eval(s) {
            Ok(v) => v,
            Err(Error::Eval(_)) => return Ok(()),
            Err(e) => return Err(e),
        };
        if m < best.1 {
            best = (s, m);
        }
        if m <= opts.tolerance
            && bv <= opts.tolerance
            && !roots.iter().any(|r| (r.0 - s).abs() < 1e-6)
        {
            roots.push((s, m, bv));
        }
        Ok(())
    };
    if opts.s_range.contains(0.0) {
        consider(0.0, &mut roots)?;
    }
    let last = nodes.len() - 1;
    for k in 0..=last {
        let left = if k == 0 { f64::INFINITY } else { values[k - 1] };
        let right = if k == last {
            f64::INFINITY
        } else {
            values[k + 1]
        };
        if !(values[k] <= left && values[k] <= right) || !values[k].is_finite() {
            continue;
        }
        let a = nodes[k.saturating_sub(1)];
        let b = nodes[(k + 1).min(last)];
        let (s, _) = golden_min(norm, a, b);
        consider(s, &mut roots)?;
    }
    if roots.is_empty() {
        return Err(Error::NoAdmissibleParameter {
            lo,
            hi,
            best_s: best.0,
            best_mismatch: best.1,
        });
    }
    roots.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
    let (s_star, mismatch_norm, bound_violation) = roots[0];
    Ok(ParameterSolution {
        s_star,
        mismatch_norm,
        bound_violation,
        other_roots: roots[1..].iter().map(|r| r.0).collect(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub verify: VerifyOptions,
    pub lower_bound: LowerBoundOptions,
    pub parameter: ParameterOptions,
}

impl SolveOptions {
    /// Uses one seed for every sampling stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.verify.seed = seed;
        self.lower_bound.seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub lower_bound: LowerBoundCheck,
    pub admissibility: Admissibility,
    pub invariance: InvarianceReport,
}

impl Certificates {
    pub fn all_passed(&self) -> bool {
        self.lower_bound.passed
            && self.admissibility.admissible
            && self.invariance.verdict == Verdict::Invariant
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct STSolution {
    pub s_star: f64,
    pub other_roots: Vec<f64>,
    pub transformed_trajectory: Trajectory,
    pub minimizer: Trajectory,
    /// Cost of the transformed trajectory in the family member `s*`.
    pub transformed_cost: f64,
    pub gauge_offset: f64,
    /// `transformed_cost − gauge_offset`.
    pub minimum_value: f64,
    pub certificates: Certificates,
}

/// Runs the whole method: verify, lower bound, parameter search,
/// reconstruction. Refuses to proceed when the family is not a symmetry.
pub fn solve(
    p: &Problem,
    f: &TransformFamily,
    cand: &CandidateControl,
    opts: &SolveOptions,
) -> Result<STSolution> {
    p.validate()?;
    f.validate(p)?;
    require_identity_time(f)?;
    let invariance = invariance::verify(p, f, &opts.verify)?;
    if invariance.verdict == Verdict::Violated {
        return Err(Error::NotInvariant {
            lagrangian: invariance.lagrangian_max_residual,
            dynamics: invariance
                .dynamics_max_residual
                .iter()
                .fold(0.0, |a, b| a.max(*b)),
        });
    }
    let lower_bound = check_lower_bound_with(p, cand, &opts.lower_bound)?;
    let param = solve_parameter(p, f, cand, &opts.parameter)?;
    let s_star = param.s_star;
    let shot = shoot(p, f, cand, s_star, opts.parameter.n_steps)?;
    let ps = model::transformed_problem(p, f, s_star)?;
    let transformed_cost = model::cost(&ps, &shot.trajectory)?;
    let gauge_offset = invariance::gauge_offset(p, f, s_star)?;
    let minimizer = model::invert_transform(f, &shot.trajectory, s_star)?;
    let admissibility =
        model::admissibility(p, &minimizer, &AdmissibilityTolerances::default_for(p))?;
    Ok(STSolution {
        s_star,
        other_roots: param.other_roots,
        transformed_trajectory: shot.trajectory,
        minimizer,
        transformed_cost,
        gauge_offset,
        minimum_value: transformed_cost - gauge_offset,
        certificates: Certificates {
            lower_bound,
            admissibility,
            invariance,
        },
    })
}
