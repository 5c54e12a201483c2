//! Direct transcription cross-check.
//!
//! Controls are piecewise constant on a uniform mesh, the state and the
//! running cost are integrated together with one RK4 step per interval, and
//! the endpoint condition is replaced by a quadratic penalty. The resulting
//! box-constrained problem is minimized by a spectral projected gradient
//! method. Gradients come from the discrete adjoint of the RK4 scheme, with
//! central differences where a Jacobian entry is undefined. This path shares
//! nothing with the analytic solver beyond the problem definition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{CompiledExpr, DomainError};
use crate::model::{Interval, Problem, SampleRegion};
use crate::ode::Rk4;
use crate::{Error, Result};

/// A scalar function of a control vector.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, u: &[f64]) -> Result<f64>;

    /// Central differences with step `1e-6·(1 + |u_i|)`.
    fn gradient(&self, u: &[f64], grad: &mut [f64]) -> Result<()> {
        let mut w = u.to_vec();
        for i in 0..u.len() {
            let h = fd_step(u[i]);
            w[i] = u[i] + h;
            let fp = self.value(&w)?;
            w[i] = u[i] - h;
            let fm = self.value(&w)?;
            w[i] = u[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
        Ok(())
    }
}

fn fd_step(u: f64) -> f64 {
    1e-6 * (1.0 + u.abs())
}

/// Adapts a closure to [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Result<f64>> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Result<f64>> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        (self.f)(u)
    }
}

/// Parts of the transcribed objective at one control vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Integral of `L`.
    pub cost: f64,
    /// `w·‖x(t1) − x_b‖²`.
    pub penalty: f64,
    pub objective: f64,
    pub endpoint: Vec<f64>,
}

/// The discretized problem. The control vector is laid out interval by
/// interval: `u[k·m + j]` is control `j` on interval `k`.
pub struct Transcription {
    n_intervals: usize,
    n: usize,
    m: usize,
    t0: f64,
    h: f64,
    penalty_weight: f64,
    x0: Vec<f64>,
    target: Vec<f64>,
    bounds: Vec<Option<Interval>>,
    lagrangian: CompiledExpr,
    dynamics: Vec<CompiledExpr>,
    /// Row `i` (dynamics, then `L`), column `c` (states, then controls) at
    /// `i·(n + m) + c`.
    jacobian: Vec<CompiledExpr>,
}

pub const MIN_INTERVALS: usize = 4;

/// Builds the penalized transcription of `p` on `n_intervals` intervals.
pub fn transcribe(p: &Problem, n_intervals: usize, penalty_weight: f64) -> Result<Transcription> {
    p.validate()?;
    if n_intervals < MIN_INTERVALS {
        return Err(Error::InvalidProblem(format!(
            "need at least {MIN_INTERVALS} intervals, got {n_intervals}"
        )));
    }
    if !(penalty_weight >= 0.0 && penalty_weight.is_finite()) {
        return Err(Error::InvalidProblem(
            "penalty weight must be finite and non-negative".into(),
        ));
    }
    let layout = p.symbols();
    let mut jacobian = Vec::new();
    for e in p.dynamics.iter().chain(std::iter::once(&p.lagrangian)) {
        for v in &layout[1..] {
            jacobian.push(e.diff(v).simplify_lite().compile(&layout)?);
        }
    }
    Ok(Transcription {
        n_intervals,
        n: p.n_states(),
        m: p.n_controls(),
        t0: p.t0,
        h: (p.t1 - p.t0) / n_intervals as f64,
        penalty_weight,
        x0: p.boundary.iter().map(|b| b.0).collect(),
        target: p.boundary.iter().map(|b| b.1).collect(),
        bounds: p.control_bounds.clone(),
        lagrangian: p.compiled_lagrangian()?,
        dynamics: p.compiled_dynamics()?,
        jacobian,
    })
}

impl Transcription {
    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    pub fn penalty_weight(&self) -> f64 {
        self.penalty_weight
    }

    /// Per-component bounds of the control vector.
    pub fn bounds(&self) -> Vec<Option<Interval>> {
        (0..self.n_intervals)
            .flat_map(|_| self.bounds.iter().copied())
            .collect()
    }

    /// Integrates intervals `k0..` from the augmented state `y` (`[x, J]`),
    /// optionally recording the augmented state at every node after `k0`.
    fn integrate_from(
        &self,
        u: &[f64],
        k0: usize,
        y: &mut [f64],
        mut record: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<(), DomainError> {
        let (n, m) = (self.n, self.m);
        let mut rk = Rk4::new(n + 1);
        let mut vals = vec![0.0; 1 + n + m];
        for k in k0..self.n_intervals {
            let uk = &u[k * m..(k + 1) * m];
            let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| self.rhs(&mut vals, t, y, uk, dy);
            rk.step(&mut rhs, self.t0 + k as f64 * self.h, y, self.h)?;
            if let Some(rec) = record.as_deref_mut() {
                rec.push(y.to_vec());
            }
        }
        Ok(())
    }

    /// Augmented right-hand side `[f, L]`.
    fn rhs(
        &self,
        vals: &mut [f64],
        t: f64,
        y: &[f64],
        uk: &[f64],
        dy: &mut [f64],
    ) -> Result<(), DomainError> {
        let n = self.n;
        vals[0] = t;
        vals[1..1 + n].copy_from_slice(&y[..n]);
        vals[1 + n..].copy_from_slice(uk);
        for (d, e) in dy.iter_mut().zip(&self.dynamics) {
            *d = e.eval(vals)?;
        }
        dy[n] = self.lagrangian.eval(vals)?;
        Ok(())
    }

    /// Exact gradient of the discrete objective by reverse sweep through the
    /// RK4 stages.
    fn adjoint_gradient(&self, u: &[f64], grad: &mut [f64]) -> Result<(), DomainError> {
        let (n, m, h) = (self.n, self.m, self.h);
        let (d, cols) = (n + 1, n + m);
        let mut nodes = vec![self.initial()];
        let mut y = self.initial();
        self.integrate_from(u, 0, &mut y, Some(&mut nodes))?;
        self.finish(&y).map_err(|_| DomainError::NonFinite)?;

        let mut lambda = vec![0.0; d];
        for i in 0..n {
            lambda[i] = 2.0 * self.penalty_weight * (y[i] - self.target[i]);
        }
        lambda[n] = 1.0;
        grad.fill(0.0);
        let mut vals = vec![0.0; 1 + cols];
        let mut stages = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        let mut slopes = vec![0.0; d];
        let mut jac = vec![0.0; d * cols];
        let offsets = [0.0, 0.5 * h, 0.5 * h, h];
        for k in (0..self.n_intervals).rev() {
            let uk = &u[k * m..(k + 1) * m];
            let t = self.t0 + k as f64 * h;
            stages[0].copy_from_slice(&nodes[k]);
            for st in 1..4 {
                let (done, rest) = stages.split_at_mut(st);
                self.rhs(
                    &mut vals,
                    t + offsets[st - 1],
                    &done[st - 1],
                    uk,
                    &mut slopes,
                )?;
                for i in 0..d {
                    rest[0][i] = nodes[k][i] + offsets[st] * slopes[i];
                }
            }
            let mut kbar: [Vec<f64>; 4] =
                [1.0, 2.0, 2.0, 1.0].map(|w| lambda.iter().map(|l| h / 6.0 * w * l).collect());
            for st in (0..4).rev() {
                vals[0] = t + offsets[st];
                vals[1..1 + n].copy_from_slice(&stages[st][..n]);
                vals[1 + n..].copy_from_slice(uk);
                for (out, e) in jac.iter_mut().zip(&self.jacobian) {
                    *out = e.eval(&vals)?;
                }
                for c in 0..cols {
                    let bar: f64 = (0..d).map(|i| jac[i * cols + c] * kbar[st][i]).sum();
                    if c < n {
                        lambda[c] += bar;
                        if st > 0 {
                            kbar[st - 1][c] += offsets[st] * bar;
                        }
                    } else {
                        grad[k * m + c - n] += bar;
                    }
                }
            }
        }
        Ok(())
    }

    /// Central differences, re-integrating only from the perturbed interval.
    fn difference_gradient(&self, u: &[f64], grad: &mut [f64]) -> Result<()> {
        let mut nodes = vec![self.initial()];
        let mut y = self.initial();
        self.integrate_from(u, 0, &mut y, Some(&mut nodes))?;
        let mut w = u.to_vec();
        let side = |w: &[f64], k: usize| -> Result<f64> {
            let mut y = nodes[k].clone();
            self.integrate_from(w, k, &mut y, None)?;
            Ok(self.finish(&y)?.objective)
        };
        for i in 0..u.len() {
            let k = i / self.m;
            let h = fd_step(u[i]);
            w[i] = u[i] + h;
            let fp = side(&w, k)?;
            w[i] = u[i] - h;
            let fm = side(&w, k)?;
            w[i] = u[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
        Ok(())
    }

    fn finish(&self, y: &[f64]) -> Result<Evaluation> {
        let endpoint = y[..self.n].to_vec();
        let mismatch: f64 = endpoint
            .iter()
            .zip(&self.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let cost = y[self.n];
        let penalty = self.penalty_weight * mismatch;
        let objective = cost + penalty;
        if !objective.is_finite() {
            return Err(DomainError::NonFinite.into());
        }
        Ok(Evaluation {
            cost,
            penalty,
            objective,
            endpoint,
        })
    }

    fn initial(&self) -> Vec<f64> {
        let mut y = self.x0.clone();
        y.push(0.0);
        y
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Evaluation> {
        self.check_len(u)?;
        let mut y = self.initial();
        self.integrate_from(u, 0, &mut y, None)?;
        self.finish(&y)
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::InvalidProblem(format!(
                "control vector has {} entries, expected {}",
                u.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

impl Objective for Transcription {
    fn dim(&self) -> usize {
        self.n_intervals * self.m
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        Ok(self.evaluate(u)?.objective)
    }

    fn gradient(&self, u: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_len(u)?;
        if self.adjoint_gradient(u, grad).is_ok() {
            return Ok(());
        }
        self.difference_gradient(u, grad)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    /// Initial spectral step length.
    pub step: f64,
    pub max_iters: usize,
    /// Convergence threshold on `‖P(u − ∇f) − u‖∞`.
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Start points for unbounded components are drawn from this interval.
    pub free_start_box: Interval,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            step: 1.0,
            max_iters: 5000,
            tol: 1e-7,
            seed: 0,
            restarts: 4,
            free_start_box: SampleRegion::default().free_control_box,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub u: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    /// Final value of every restart, in restart order.
    pub restart_values: Vec<f64>,
}

fn project(u: &mut [f64], bounds: &[Option<Interval>]) {
    for (v, b) in u.iter_mut().zip(bounds) {
        if let Some(b) = b {
            *v = b.clamp(*v);
        }
    }
}

fn projected_gradient_norm(u: &[f64], g: &[f64], bounds: &[Option<Interval>]) -> f64 {
    let mut p: Vec<f64> = u.iter().zip(g).map(|(a, b)| a - b).collect();
    project(&mut p, bounds);
    p.iter()
        .zip(u)
        .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
}

const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e12;
const NONMONOTONE_MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

struct Run {
    u: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
    pg_norm: f64,
}

/// Spectral projected gradient from one start point: Barzilai–Borwein step
/// lengths, nonmonotone Armijo backtracking along the projected direction.
fn spg<O: Objective + ?Sized>(
    obj: &O,
    bounds: &[Option<Interval>],
    mut u: Vec<f64>,
    opts: &MinimizeOptions,
) -> Result<Run> {
    let dim = u.len();
    project(&mut u, bounds);
    let mut f = obj.value(&u)?;
    let mut g = vec![0.0; dim];
    obj.gradient(&u, &mut g)?;
    let mut history = vec![f];
    let mut alpha = opts.step.clamp(STEP_MIN, STEP_MAX);
    let mut g_new = vec![0.0; dim];
    let mut iterations = 0;
    loop {
        let pg = projected_gradient_norm(&u, &g, bounds);
        if pg <= opts.tol || iterations >= opts.max_iters {
            return Ok(Run {
                u,
                value: f,
                converged: pg <= opts.tol,
                iterations,
                pg_norm: pg,
            });
        }
        iterations += 1;
        let mut d: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
        project(&mut d, bounds);
        for (di, ui) in d.iter_mut().zip(&u) {
            *di -= ui;
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        let f_ref = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + lambda * b).collect();
            // the convex combination can round past a bound
            project(&mut trial, bounds);
            match obj.value(&trial) {
                Ok(ft) if ft <= f_ref + ARMIJO * lambda * slope => {
                    accepted = Some((trial, ft));
                    break;
                }
                _ => lambda *= 0.5,
            }
        }
        let Some((u_new, f_new)) = accepted else {
            // no decrease along the projected direction at machine precision
            return Ok(Run {
                u,
                value: f,
                converged: false,
                iterations,
                pg_norm: pg,
            });
        };
        obj.gradient(&u_new, &mut g_new)?;
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..dim {
            let s = u_new[i] - u[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        alpha = if sy > 0.0 {
            (ss / sy).clamp(STEP_MIN, STEP_MAX)
        } else {
            STEP_MAX
        };
        u = u_new;
        f = f_new;
        std::mem::swap(&mut g, &mut g_new);
        history.push(f);
        if history.len() > NONMONOTONE_MEMORY {
            history.remove(0);
        }
    }
}

/// Multi-start box-constrained minimization. Restart `r` starts from a
/// uniform draw over the box (unbounded components from
/// `opts.free_start_box`) using stream `r` of the seeded generator; the best
/// final value wins.
pub fn minimize<O: Objective + ?Sized>(
    obj: &O,
    bounds: &[Option<Interval>],
    opts: &MinimizeOptions,
) -> Result<Minimum> {
    if bounds.len() != obj.dim() {
        return Err(Error::InvalidProblem(format!(
            "{} bounds for {} variables",
            bounds.len(),
            obj.dim()
        )));
    }
    let mut best: Option<Run> = None;
    let mut restart_values = Vec::with_capacity(opts.restarts.max(1));
    for r in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(r as u64);
        let start: Vec<f64> = bounds
            .iter()
            .map(|b| b.unwrap_or(opts.free_start_box).sample(&mut rng))
            .collect();
        let run = match spg(obj, bounds, start, opts) {
            Ok(run) => run,
            Err(Error::Eval(_)) => {
                restart_values.push(f64::INFINITY);
                continue;
            }
            Err(e) => return Err(e),
        };
        restart_values.push(run.value);
        if best.as_ref().is_none_or(|b| run.value < b.value) {
            best = Some(run);
        }
    }
    let best =
        best.ok_or_else(|| Error::Unsupported("no restart reached a finite objective".into()))?;
    Ok(Minimum {
        u: best.u,
        value: best.value,
        converged: best.converged,
        iterations: best.iterations,
        projected_gradient_norm: best.pg_norm,
        restart_values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedSolution {
    pub n_intervals: usize,
    /// `control_values[k][j]`: control `j` on interval `k`.
    pub control_values: Vec<Vec<f64>>,
    pub objective: f64,
    pub cost: f64,
    pub penalty: f64,
    pub endpoint_penalty_weight: f64,
    pub converged: bool,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    pub restart_objectives: Vec<f64>,
}

/// Transcribes `p` on `n_intervals` intervals and minimizes it.
pub fn solve_discretized(
    p: &Problem,
    n_intervals: usize,
    penalty_weight: f64,
    opts: &MinimizeOptions,
) -> Result<DiscretizedSolution> {
    let tr = transcribe(p, n_intervals, penalty_weight)?;
    let min = minimize(&tr, &tr.bounds(), opts)?;
    let ev = tr.evaluate(&min.u)?;
    Ok(DiscretizedSolution {
        n_intervals,
        control_values: min
            .u
            .chunks(p.n_controls().max(1))
            .map(<[f64]>::to_vec)
            .collect(),
        objective: ev.objective,
        cost: ev.cost,
        penalty: ev.penalty,
        endpoint_penalty_weight: penalty_weight,
        converged: min.converged,
        iterations: min.iterations,
        projected_gradient_norm: min.projected_gradient_norm,
        restart_objectives: min.restart_values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckOptions {
    pub penalty_weight: f64,
    pub minimize: MinimizeOptions,
    /// Relative growth allowed between consecutive gaps.
    pub noise_band: f64,
    /// Gaps below this are treated as equal when judging refinement.
    pub gap_floor: f64,
    /// How far below the claimed minimum the penalty-free cost may fall.
    pub upper_bound_slack: f64,
}

impl Default for CrosscheckOptions {
    fn default() -> Self {
        CrosscheckOptions {
            penalty_weight: 1e4,
            minimize: MinimizeOptions::default(),
            noise_band: 0.1,
            gap_floor: 1e-3,
            upper_bound_slack: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub solution: DiscretizedSolution,
    /// `|objective − claimed|`.
    pub gap: f64,
    pub median_restart_objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub claimed_minimum: f64,
    pub grids: Vec<GridResult>,
    pub final_gap: f64,
    /// Consecutive gaps satisfy `gap[k+1] ≤ (1 + noise_band)·gap[k]` or are
    /// both below `gap_floor`.
    pub gaps_non_increasing: bool,
    /// No grid found a cost below `claimed − upper_bound_slack`.
    pub upper_bound_respected: bool,
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}

/// Solves the transcription on every grid in `grids` (ascending) and
/// compares each discretized optimum with `claimed_minimum`.
pub fn crosscheck(
    p: &Problem,
    claimed_minimum: f64,
    grids: &[usize],
    opts: &CrosscheckOptions,
) -> Result<CrosscheckReport> {
    if grids.is_empty() || grids.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidProblem(
            "grid list must be non-empty and ascending".into(),
        ));
    }
    let mut results = Vec::with_capacity(grids.len());
    for &n in grids {
        let solution = solve_discretized(p, n, opts.penalty_weight, &opts.minimize)?;
        results.push(GridResult {
            gap: (solution.objective - claimed_minimum).abs(),
            median_restart_objective: median(&solution.restart_objectives),
            solution,
        });
    }
    let gaps_non_increasing = results.windows(2).all(|w| {
        let (a, b) = (w[0].gap, w[1].gap);
        b <= (1.0 + opts.noise_band) * a || b.max(a) <= opts.gap_floor
    });
    let upper_bound_respected = results
        .iter()
        .all(|r| r.solution.cost >= claimed_minimum - opts.upper_bound_slack);
    Ok(CrosscheckReport {
        claimed_minimum,
        final_gap: results.last().map_or(f64::NAN, |r| r.gap),
        grids: results,
        gaps_non_increasing,
        upper_bound_respected,
    })
}
