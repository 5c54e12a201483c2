//! Lagrange-form optimal control problems, one-parameter transformation
//! families, and sampled trajectories.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{CompiledExpr, Expr, UnaryOp};
use crate::quadrature;
use crate::{Error, Result};

/// Name of the independent variable.
pub const TIME: &str = "t";
/// Name of the family parameter.
pub const PARAM: &str = "s";

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Distance from `v` to the interval (0 inside).
    pub fn excess(&self, v: f64) -> f64 {
        (self.lo - v).max(v - self.hi).max(0.0)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Boxes used when drawing random `(t, x, u)` points for sampling checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRegion {
    pub state_box: Interval,
    /// Used for controls without bounds.
    pub free_control_box: Interval,
}

impl Default for SampleRegion {
    fn default() -> Self {
        SampleRegion {
            state_box: Interval::new(-3.0, 3.0),
            free_control_box: Interval::new(-3.0, 3.0),
        }
    }
}

/// Minimize `∫ L(t,x,u) dt` on `[t0, t1]` subject to `x' = φ(t,x,u)`,
/// fixed endpoint states and box control constraints.
#[derive(Clone, Debug)]
pub struct Problem {
    pub states: Vec<String>,
    pub controls: Vec<String>,
    pub t0: f64,
    pub t1: f64,
    pub lagrangian: Expr,
    /// One right-hand side per state.
    pub dynamics: Vec<Expr>,
    /// `(x(t0), x(t1))` per state.
    pub boundary: Vec<(f64, f64)>,
    /// `None` means unbounded.
    pub control_bounds: Vec<Option<Interval>>,
}

fn check_names<'a>(
    names: impl IntoIterator<Item = &'a String>,
    reserved: &[&str],
) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for n in names {
        let valid = n.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
            && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(format!("`{n}` is not a valid identifier"));
        }
        if reserved.contains(&n.as_str()) || UnaryOp::from_function_name(n).is_some() {
            return Err(format!("`{n}` is reserved"));
        }
        if !seen.insert(n.as_str()) {
            return Err(format!("`{n}` declared twice"));
        }
    }
    Ok(())
}

impl Problem {
    /// `[t, states..., controls...]`: the evaluation layout for L and φ.
    pub fn symbols(&self) -> Vec<String> {
        std::iter::once(TIME.to_owned())
            .chain(self.states.iter().cloned())
            .chain(self.controls.iter().cloned())
            .collect()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProblem(m));
        if let Err(m) = check_names(self.states.iter().chain(&self.controls), &[TIME, PARAM]) {
            return bad(m);
        }
        if !(self.t0.is_finite() && self.t1.is_finite() && self.t0 < self.t1) {
            return bad(format!("need t0 < t1, got [{}, {}]", self.t0, self.t1));
        }
        if self.dynamics.len() != self.states.len() {
            return bad(format!(
                "{} states but {} dynamics equations",
                self.states.len(),
                self.dynamics.len()
            ));
        }
        if self.boundary.len() != self.states.len() {
            return bad(format!(
                "{} states but {} boundary pairs",
                self.states.len(),
                self.boundary.len()
            ));
        }
        if self.control_bounds.len() != self.controls.len() {
            return bad(format!(
                "{} controls but {} bound entries",
                self.controls.len(),
                self.control_bounds.len()
            ));
        }
        for (name, b) in self.controls.iter().zip(&self.control_bounds) {
            if let Some(b) = b {
                if !(b.lo <= b.hi) {
                    return bad(format!("bounds of `{name}` have lower > upper"));
                }
            }
        }
        let allowed: BTreeSet<String> = self.symbols().into_iter().collect();
        for (what, e) in std::iter::once(("lagrangian", &self.lagrangian))
            .chain(self.dynamics.iter().map(|e| ("dynamics", e)))
        {
            if let Some(v) = e.free_vars().difference(&allowed).next() {
                return bad(format!("{what} uses undeclared symbol `{v}`"));
            }
        }
        Ok(())
    }

    pub(crate) fn compiled_lagrangian(&self) -> Result<CompiledExpr> {
        Ok(self.lagrangian.compile(&self.symbols())?)
    }

    pub(crate) fn compiled_dynamics(&self) -> Result<Vec<CompiledExpr>> {
        let layout = self.symbols();
        self.dynamics
            .iter()
            .map(|e| Ok(e.compile(&layout)?))
            .collect()
    }

    pub(crate) fn control_sampling_box(&self, j: usize, region: &SampleRegion) -> Interval {
        self.control_bounds[j].unwrap_or(region.free_control_box)
    }

    /// Draws `(t, x, u)` uniformly from `[t0,t1] × state_box^n × Ω`.
    pub(crate) fn sample_point<R: Rng>(
        &self,
        region: &SampleRegion,
        rng: &mut R,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let t = Interval::new(self.t0, self.t1).sample(rng);
        let x = (0..self.n_states())
            .map(|_| region.state_box.sample(rng))
            .collect();
        let u = (0..self.n_controls())
            .map(|j| self.control_sampling_box(j, region).sample(rng))
            .collect();
        (t, x, u)
    }
}

/// A one-parameter family `h^s(t,x,u) = (t^s, x^s, u^s)` together with its
/// gauge term `Φ^s`.
#[derive(Clone, Debug)]
pub struct TransformFamily {
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
    pub time_map: Expr,
    pub state_maps: Vec<Expr>,
    pub control_maps: Vec<Expr>,
    pub gauge: Expr,
}

impl TransformFamily {
    /// All maps equal to their own variable and zero gauge.
    pub fn identity(p: &Problem) -> Self {
        TransformFamily {
            state_names: p.states.clone(),
            control_names: p.controls.clone(),
            time_map: Expr::var(TIME),
            state_maps: p.states.iter().map(|n| Expr::var(n)).collect(),
            control_maps: p.controls.iter().map(|n| Expr::var(n)).collect(),
            gauge: Expr::Const(0.0),
        }
    }

    /// `[t, states..., controls..., s]`
    pub fn symbols(&self) -> Vec<String> {
        std::iter::once(TIME.to_owned())
            .chain(self.state_names.iter().cloned())
            .chain(self.control_names.iter().cloned())
            .chain(std::iter::once(PARAM.to_owned()))
            .collect()
    }

    /// True when the time map depends on nothing but `t` and `s`.
    pub fn time_map_is_pointwise(&self) -> bool {
        self.time_map
            .free_vars()
            .iter()
            .all(|v| v == TIME || v == PARAM)
    }

    /// Checks shapes against `p`, that `h^0` is the identity and that the
    /// gauge at `s = 0` has zero total time derivative (all partials vanish),
    /// by sampling 100 points.
    pub fn validate(&self, p: &Problem) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTransform(m));
        if self.state_names != p.states || self.control_names != p.controls {
            return bad("variable names differ from the problem's".into());
        }
        if self.state_maps.len() != p.n_states() || self.control_maps.len() != p.n_controls() {
            return bad("need one map per state and per control".into());
        }
        let symbols = self.symbols();
        let allowed: BTreeSet<&str> = symbols.iter().map(String::as_str).collect();
        for e in self.all_maps().chain(std::iter::once(&self.gauge)) {
            if let Some(v) = e.free_vars().iter().find(|v| !allowed.contains(v.as_str())) {
                return bad(format!("map uses undeclared symbol `{v}`"));
            }
        }
        let compiled = CompiledFamily::new(self)?;
        let own: Vec<usize> = (0..1 + p.n_states() + p.n_controls()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let region = SampleRegion::default();
        let mut vals = vec![0.0; symbols.len()];
        for _ in 0..100 {
            let (t, x, u) = p.sample_point(&region, &mut rng);
            compiled.fill(&mut vals, t, &x, &u, 0.0);
            for (map, &slot) in compiled.maps().zip(&own) {
                let v = match map.value.eval(&vals) {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                if (v - vals[slot]).abs() > 1e-12 {
                    return bad(format!(
                        "map for `{}` is not the identity at s = 0 ({} vs {})",
                        symbols[slot], v, vals[slot]
                    ));
                }
            }
            for (k, g) in compiled.gauge.grad.iter().enumerate() {
                if let Ok(d) = g.eval(&vals) {
                    if d.abs() > 1e-12 {
                        return bad(format!(
                            "gauge at s = 0 varies with `{}` (partial {d:e})",
                            symbols[k]
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn all_maps(&self) -> impl Iterator<Item = &Expr> {
        std::iter::once(&self.time_map)
            .chain(&self.state_maps)
            .chain(&self.control_maps)
    }
}

/// A compiled expression and its partials with respect to `t`, the states and
/// the controls (in that order).
#[derive(Clone, Debug)]
pub(crate) struct CompiledMap {
    pub value: CompiledExpr,
    pub grad: Vec<CompiledExpr>,
}

impl CompiledMap {
    fn new(e: &Expr, layout: &[String], n_wrt: usize) -> Result<Self> {
        Ok(CompiledMap {
            value: e.compile(layout)?,
            grad: layout[..n_wrt]
                .iter()
                .map(|v| e.diff(v).compile(layout))
                .collect::<std::result::Result<_, _>>()?,
        })
    }

    /// `d/dt F = ∂F/∂t + Σ ∂F/∂x_i ẋ_i + Σ ∂F/∂u_j u̇_j`
    pub fn total_derivative(&self, vals: &[f64], xdot: &[f64], udot: &[f64]) -> Result<f64> {
        let n = xdot.len();
        let mut d = self.grad[0].eval(vals)?;
        for (i, xd) in xdot.iter().enumerate() {
            d += self.grad[1 + i].eval(vals)? * xd;
        }
        for (j, ud) in udot.iter().enumerate() {
            d += self.grad[1 + n + j].eval(vals)? * ud;
        }
        Ok(d)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct CompiledFamily {
    pub n: usize,
    pub m: usize,
    pub time: CompiledMap,
    pub states: Vec<CompiledMap>,
    pub controls: Vec<CompiledMap>,
    pub gauge: CompiledMap,
}

impl CompiledFamily {
    pub fn new(f: &TransformFamily) -> Result<Self> {
        let layout = f.symbols();
        let n = f.state_names.len();
        let m = f.control_names.len();
        let wrt = 1 + n + m;
        Ok(CompiledFamily {
            n,
            m,
            time: CompiledMap::new(&f.time_map, &layout, wrt)?,
            states: f
                .state_maps
                .iter()
                .map(|e| CompiledMap::new(e, &layout, wrt))
                .collect::<Result<_>>()?,
            controls: f
                .control_maps
                .iter()
                .map(|e| CompiledMap::new(e, &layout, wrt))
                .collect::<Result<_>>()?,
            gauge: CompiledMap::new(&f.gauge, &layout, wrt)?,
        })
    }

    pub fn maps(&self) -> impl Iterator<Item = &CompiledMap> {
        std::iter::once(&self.time)
            .chain(&self.states)
            .chain(&self.controls)
    }

    pub fn fill(&self, vals: &mut [f64], t: f64, x: &[f64], u: &[f64], s: f64) {
        vals[0] = t;
        vals[1..1 + self.n].copy_from_slice(x);
        vals[1 + self.n..1 + self.n + self.m].copy_from_slice(u);
        vals[1 + self.n + self.m] = s;
    }

    /// `(t^s, x^s, u^s)` at one point.
    pub fn apply_point(
        &self,
        t: f64,
        x: &[f64],
        u: &[f64],
        s: f64,
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let mut vals = vec![0.0; 2 + self.n + self.m];
        self.fill(&mut vals, t, x, u, s);
        let ts = self.time.value.eval(&vals)?;
        let xs = self
            .states
            .iter()
            .map(|c| c.value.eval(&vals))
            .collect::<std::result::Result<_, _>>()?;
        let us = self
            .controls
            .iter()
            .map(|c| c.value.eval(&vals))
            .collect::<std::result::Result<_, _>>()?;
        Ok((ts, xs, us))
    }
}

/// Sampled state and control functions on a strictly increasing grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    grid: Vec<f64>,
    states: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
}

impl Trajectory {
    /// `states[k]` and `controls[k]` are the rows at `grid[k]`.
    pub fn new(grid: Vec<f64>, states: Vec<Vec<f64>>, controls: Vec<Vec<f64>>) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidTrajectory(m.into()));
        if grid.len() < 2 {
            return bad("grid needs at least two points");
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("grid must be finite and strictly increasing");
        }
        if states.len() != grid.len() || controls.len() != grid.len() {
            return bad("one state row and one control row per grid point");
        }
        let (n, m) = (states[0].len(), controls[0].len());
        if states.iter().any(|r| r.len() != n) || controls.iter().any(|r| r.len() != m) {
            return bad("rows have inconsistent widths");
        }
        Ok(Trajectory {
            grid,
            states,
            controls,
        })
    }

    /// Samples closed-form state and control functions on `grid`.
    pub fn from_fn<F>(grid: Vec<f64>, f: F) -> Result<Self>
    where
        F: Fn(f64) -> (Vec<f64>, Vec<f64>),
    {
        let (states, controls) = grid.iter().map(|&t| f(t)).unzip();
        Trajectory::new(grid, states, controls)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.states[0].len()
    }

    pub fn n_controls(&self) -> usize {
        self.controls[0].len()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k]
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k]
    }

    pub fn state_series(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|r| r[i]).collect()
    }

    pub fn control_series(&self, j: usize) -> Vec<f64> {
        self.controls.iter().map(|r| r[j]).collect()
    }

    /// Largest pointwise difference in grid, states and controls.
    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        assert_eq!(self.len(), other.len());
        let mut d: f64 = 0.0;
        for k in 0..self.len() {
            d = d.max((self.grid[k] - other.grid[k]).abs());
            for (a, b) in self.states[k].iter().zip(&other.states[k]) {
                d = d.max((a - b).abs());
            }
            for (a, b) in self.controls[k].iter().zip(&other.controls[k]) {
                d = d.max((a - b).abs());
            }
        }
        d
    }

    fn check_shape(&self, n: usize, m: usize) -> Result<()> {
        if self.n_states() != n || self.n_controls() != m {
            return Err(Error::InvalidTrajectory(format!(
                "expected {n} states and {m} controls, got {} and {}",
                self.n_states(),
                self.n_controls()
            )));
        }
        Ok(())
    }
}

/// Per-control functions of `t` used as an inspection candidate.
#[derive(Clone, Debug)]
pub struct CandidateControl {
    pub controls: Vec<Expr>,
}

impl CandidateControl {
    pub fn new(controls: Vec<Expr>) -> Result<Self> {
        for e in &controls {
            if let Some(v) = e.free_vars().iter().find(|v| *v != TIME) {
                return Err(Error::InvalidProblem(format!(
                    "candidate control may depend on `t` only, found `{v}`"
                )));
            }
        }
        Ok(CandidateControl { controls })
    }

    pub(crate) fn compile(&self) -> Result<Vec<CompiledExpr>> {
        self.controls
            .iter()
            .map(|e| Ok(e.compile(&[TIME])?))
            .collect()
    }
}

fn image_grid(
    cf: &CompiledFamily,
    f: &TransformFamily,
    traj: &Trajectory,
    s: f64,
) -> Result<Vec<f64>> {
    if !f.time_map_is_pointwise() {
        return Err(Error::Unsupported(
            "time map must depend on t and s only".into(),
        ));
    }
    let mut vals = vec![0.0; 2 + cf.n + cf.m];
    let mut out = Vec::with_capacity(traj.len());
    for (k, &t) in traj.grid().iter().enumerate() {
        cf.fill(&mut vals, t, traj.state(k), traj.control(k), s);
        let ts = cf.time.value.eval(&vals)?;
        if let Some(&prev) = out.last() {
            if ts <= prev {
                return Err(Error::NonMonotoneTimeMap { t });
            }
        }
        out.push(ts);
    }
    Ok(out)
}

/// Maps every sample `(t, x, u)` of `traj` to `(t^s, x^s, u^s)`.
pub fn apply_transform(f: &TransformFamily, traj: &Trajectory, s: f64) -> Result<Trajectory> {
    let cf = CompiledFamily::new(f)?;
    traj.check_shape(cf.n, cf.m)?;
    let grid = image_grid(&cf, f, traj, s)?;
    let mut states = Vec::with_capacity(traj.len());
    let mut controls = Vec::with_capacity(traj.len());
    for (k, &t) in traj.grid().iter().enumerate() {
        let (_, xs, us) = cf.apply_point(t, traj.state(k), traj.control(k), s)?;
        states.push(xs);
        controls.push(us);
    }
    Trajectory::new(grid, states, controls)
}

const NEWTON_ITERS: usize = 60;

fn invert_time(cf: &CompiledFamily, target: f64, s: f64) -> Result<f64> {
    let mut vals = vec![0.0; 2 + cf.n + cf.m];
    let mut t = target;
    for _ in 0..NEWTON_ITERS {
        vals[0] = t;
        vals[1 + cf.n + cf.m] = s;
        let r = cf.time.value.eval(&vals)? - target;
        if r.abs() <= 1e-15 * (1.0 + target.abs()) {
            return Ok(t);
        }
        let d = cf.time.grad[0].eval(&vals)?;
        if d == 0.0 {
            return Err(Error::Inversion {
                t: target,
                reason: "time map has zero derivative".into(),
            });
        }
        let step = r / d;
        t -= step;
        if step.abs() <= 1e-15 * (1.0 + t.abs()) {
            return Ok(t);
        }
    }
    Err(Error::Inversion {
        t: target,
        reason: "Newton iteration on the time map did not converge".into(),
    })
}

/// Solves `(x^s, u^s)(t, x, u) = (xs, us)` for `(x, u)` by Newton's method.
fn invert_point(
    cf: &CompiledFamily,
    t: f64,
    xs: &[f64],
    us: &[f64],
    s: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (cf.n, cf.m);
    let dim = n + m;
    let target: Vec<f64> = xs.iter().chain(us).copied().collect();
    let scale = 1.0 + target.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut z = target.clone();
    let mut vals = vec![0.0; 2 + dim];
    let fail = |reason: &str| Error::Inversion {
        t,
        reason: reason.into(),
    };
    for _ in 0..NEWTON_ITERS {
        cf.fill(&mut vals, t, &z[..n], &z[n..], s);
        let mut resid = DVector::zeros(dim);
        let mut jac = DMatrix::zeros(dim, dim);
        for (r, map) in cf.states.iter().chain(&cf.controls).enumerate() {
            resid[r] = map.value.eval(&vals)? - target[r];
            for c in 0..dim {
                jac[(r, c)] = map.grad[1 + c].eval(&vals)?;
            }
        }
        if resid.amax() <= 1e-14 * scale {
            return Ok((z[..n].to_vec(), z[n..].to_vec()));
        }
        let step = jac.lu().solve(&resid).ok_or_else(|| {
            fail("map is not invertible in its own variables (singular Jacobian)")
        })?;
        for (zi, di) in z.iter_mut().zip(step.iter()) {
            *zi -= di;
        }
        if step.amax() <= 1e-15 * scale {
            return Ok((z[..n].to_vec(), z[n..].to_vec()));
        }
    }
    Err(fail("Newton iteration did not converge"))
}

/// Recovers the original trajectory from one transformed at parameter `s`.
pub fn invert_transform(f: &TransformFamily, traj: &Trajectory, s: f64) -> Result<Trajectory> {
    let cf = CompiledFamily::new(f)?;
    traj.check_shape(cf.n, cf.m)?;
    if !f.time_map_is_pointwise() {
        return Err(Error::Unsupported(
            "time map must depend on t and s only".into(),
        ));
    }
    let identity_time = f.time_map == Expr::var(TIME);
    let mut grid = Vec::with_capacity(traj.len());
    let mut states = Vec::with_capacity(traj.len());
    let mut controls = Vec::with_capacity(traj.len());
    for (k, &ts) in traj.grid().iter().enumerate() {
        let t = if identity_time {
            ts
        } else {
            invert_time(&cf, ts, s)?
        };
        let (x, u) = invert_point(&cf, t, traj.state(k), traj.control(k), s)?;
        grid.push(t);
        states.push(x);
        controls.push(u);
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotoneTimeMap { t: grid[0] });
    }
    Trajectory::new(grid, states, controls)
}

/// The family member at `s`: interval, boundary values and control box mapped
/// through the transformation; `L` and `φ` keep their form.
///
/// Requires a pointwise time map, state maps free of controls, and control
/// maps that depend only on their own control (and `t`, `s` when unbounded).
pub fn transformed_problem(p: &Problem, f: &TransformFamily, s: f64) -> Result<Problem> {
    let cf = CompiledFamily::new(f)?;
    if !f.time_map_is_pointwise() {
        return Err(Error::Unsupported(
            "time map must depend on t and s only".into(),
        ));
    }
    for (name, e) in p.states.iter().zip(&f.state_maps) {
        if let Some(u) = p.controls.iter().find(|u| e.depends_on(u)) {
            return Err(Error::Unsupported(format!(
                "map for state `{name}` depends on control `{u}`, so boundary values cannot be mapped"
            )));
        }
    }
    let zeros_u = vec![0.0; p.n_controls()];
    let (left, right): (Vec<f64>, Vec<f64>) = p.boundary.iter().copied().unzip();
    let (t0s, left_s, _) = cf.apply_point(p.t0, &left, &zeros_u, s)?;
    let (t1s, right_s, _) = cf.apply_point(p.t1, &right, &zeros_u, s)?;
    let mut bounds = Vec::with_capacity(p.n_controls());
    for (j, (name, e)) in p.controls.iter().zip(&f.control_maps).enumerate() {
        let Some(b) = p.control_bounds[j] else {
            bounds.push(None);
            continue;
        };
        let foreign = e.free_vars().into_iter().find(|v| v != name && v != PARAM);
        if let Some(v) = foreign {
            return Err(Error::Unsupported(format!(
                "map for bounded control `{name}` depends on `{v}`; the image of its box is not a box"
            )));
        }
        let at = |v: f64| -> Result<f64> {
            let mut u = zeros_u.clone();
            u[j] = v;
            Ok(cf.apply_point(p.t0, &left, &u, s)?.2[j])
        };
        let (lo, hi) = (at(b.lo)?, at(b.hi)?);
        bounds.push(Some(Interval::new(lo.min(hi), lo.max(hi))));
    }
    Ok(Problem {
        states: p.states.clone(),
        controls: p.controls.clone(),
        t0: t0s,
        t1: t1s,
        lagrangian: p.lagrangian.clone(),
        dynamics: p.dynamics.clone(),
        boundary: left_s.into_iter().zip(right_s).collect(),
        control_bounds: bounds,
    })
}

fn covers(p: &Problem, traj: &Trajectory) -> Result<()> {
    let g = traj.grid();
    let tol = 1e-9 * (1.0 + p.t0.abs().max(p.t1.abs()));
    if (g[0] - p.t0).abs() > tol || (g[g.len() - 1] - p.t1).abs() > tol {
        return Err(Error::InvalidTrajectory(format!(
            "grid spans [{}, {}] but the problem interval is [{}, {}]",
            g[0],
            g[g.len() - 1],
            p.t0,
            p.t1
        )));
    }
    traj.check_shape(p.n_states(), p.n_controls())
}

/// Values of `L` at every sample of `traj`.
pub fn lagrangian_samples(p: &Problem, traj: &Trajectory) -> Result<Vec<f64>> {
    let l = p.compiled_lagrangian()?;
    let mut vals = vec![0.0; 1 + p.n_states() + p.n_controls()];
    traj.grid()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            fill_point(&mut vals, t, traj.state(k), traj.control(k));
            Ok(l.eval(&vals)?)
        })
        .collect()
}

fn fill_point(vals: &mut [f64], t: f64, x: &[f64], u: &[f64]) {
    vals[0] = t;
    vals[1..1 + x.len()].copy_from_slice(x);
    vals[1 + x.len()..1 + x.len() + u.len()].copy_from_slice(u);
}

/// Quadrature of the Lagrangian along `traj` (Simpson on odd grids,
/// trapezoid otherwise).
pub fn cost(p: &Problem, traj: &Trajectory) -> Result<f64> {
    covers(p, traj)?;
    let values = lagrangian_samples(p, traj)?;
    Ok(quadrature::integrate(traj.grid(), &values))
}

/// Three-point derivative at interior node `k` of a non-uniform grid.
pub(crate) fn central_derivative(grid: &[f64], y: &[f64], k: usize) -> f64 {
    let h1 = grid[k] - grid[k - 1];
    let h2 = grid[k + 1] - grid[k];
    h2 / (h1 * (h1 + h2)) * (y[k] - y[k - 1]) + h1 / (h2 * (h1 + h2)) * (y[k + 1] - y[k])
}

/// Max over interior nodes and states of `|ẋ_fd − φ(t,x,u)|`.
pub fn dynamics_residual(p: &Problem, traj: &Trajectory) -> Result<f64> {
    traj.check_shape(p.n_states(), p.n_controls())?;
    if traj.len() < 3 {
        return Err(Error::InvalidTrajectory(
            "need at least 3 grid points for central differences".into(),
        ));
    }
    let phi = p.compiled_dynamics()?;
    let series: Vec<Vec<f64>> = (0..p.n_states()).map(|i| traj.state_series(i)).collect();
    let mut vals = vec![0.0; 1 + p.n_states() + p.n_controls()];
    let mut worst: f64 = 0.0;
    for k in 1..traj.len() - 1 {
        fill_point(&mut vals, traj.grid()[k], traj.state(k), traj.control(k));
        for (i, rhs) in phi.iter().enumerate() {
            let fd = central_derivative(traj.grid(), &series[i], k);
            worst = worst.max((fd - rhs.eval(&vals)?).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityTolerances {
    pub dynamics: f64,
    pub boundary: f64,
    pub control_box: f64,
}

impl AdmissibilityTolerances {
    /// `1e-4·max(1, t1 − t0)` on the dynamics residual, `1e-6` on boundary
    /// mismatch, `1e-9` on box excess.
    pub fn default_for(p: &Problem) -> Self {
        AdmissibilityTolerances {
            dynamics: 1e-4 * (p.t1 - p.t0).max(1.0),
            boundary: 1e-6,
            control_box: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub dynamics_residual: f64,
    pub boundary_mismatch: f64,
    pub box_violation: f64,
    pub admissible: bool,
}

/// Checks the dynamics, both endpoint conditions and the control box.
pub fn admissibility(
    p: &Problem,
    traj: &Trajectory,
    tol: &AdmissibilityTolerances,
) -> Result<Admissibility> {
    covers(p, traj)?;
    let dynamics_residual = dynamics_residual(p, traj)?;
    let last = traj.len() - 1;
    let mut boundary_mismatch: f64 = 0.0;
    for (i, (a, b)) in p.boundary.iter().enumerate() {
        boundary_mismatch = boundary_mismatch
            .max((traj.state(0)[i] - a).abs())
            .max((traj.state(last)[i] - b).abs());
    }
    let mut box_violation: f64 = 0.0;
    for k in 0..traj.len() {
        for (j, b) in p.control_bounds.iter().enumerate() {
            if let Some(b) = b {
                box_violation = box_violation.max(b.excess(traj.control(k)[j]));
            }
        }
    }
    Ok(Admissibility {
        dynamics_residual,
        boundary_mismatch,
        box_violation,
        admissible: dynamics_residual <= tol.dynamics
            && boundary_mismatch <= tol.boundary
            && box_violation <= tol.control_box,
    })
}
