//! Sampling-based verification of variational symmetries.
//!
//! A family `h^s` is a symmetry of `(L, φ)` up to the gauge `Φ^s` when, along
//! every admissible pair,
//!
//! ```text
//! L(h^s) · d/dt t^s = L + d/dt Φ^s
//! d/dt x^s          = φ(h^s) · d/dt t^s
//! ```
//!
//! Total time derivatives are expanded with the chain rule using symbolic
//! partials, then both identities are evaluated at random points that lie on
//! the control system (`ẋ = φ(t,x,u)`) with an independently drawn `u̇`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::CompiledExpr;
use crate::model::{CompiledFamily, Interval, Problem, SampleRegion, TransformFamily};
use crate::{Error, Result};

/// One point `(t, x, u, ẋ, u̇, s)` at which the identities are evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub xdot: Vec<f64>,
    pub udot: Vec<f64>,
    pub s: f64,
}

impl SamplePoint {
    /// Builds a sample on the control system: `ẋ := φ(t, x, u)`.
    pub fn on_system(
        p: &Problem,
        t: f64,
        x: Vec<f64>,
        u: Vec<f64>,
        udot: Vec<f64>,
        s: f64,
    ) -> Result<Self> {
        let phi = p.compiled_dynamics()?;
        let xdot = eval_dynamics(&phi, t, &x, &u)?;
        Ok(SamplePoint {
            t,
            x,
            u,
            xdot,
            udot,
            s,
        })
    }
}

fn eval_dynamics(phi: &[CompiledExpr], t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let mut vals = Vec::with_capacity(1 + x.len() + u.len());
    vals.push(t);
    vals.extend_from_slice(x);
    vals.extend_from_slice(u);
    phi.iter().map(|e| Ok(e.eval(&vals)?)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Invariant,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub lagrangian_max_residual: f64,
    /// Per state.
    pub dynamics_max_residual: Vec<f64>,
    pub samples_used: usize,
    /// Draws rejected because of a domain error and redrawn.
    pub domain_errors: usize,
    pub s_range: Interval,
    pub tolerance: f64,
    pub verdict: Verdict,
    /// Sample with the largest residual.
    pub worst_sample: Option<SamplePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub n_samples: usize,
    pub s_range: Interval,
    pub seed: u64,
    pub tolerance: f64,
    pub region: SampleRegion,
    /// Box for the independently drawn control rates.
    pub udot_box: Interval,
    /// Redraws allowed per sample after a domain error.
    pub max_retries: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            n_samples: 100,
            s_range: Interval::new(-2.0, 2.0),
            seed: 0,
            tolerance: 1e-9,
            region: SampleRegion::default(),
            udot_box: Interval::new(-3.0, 3.0),
            max_retries: 100,
        }
    }
}

/// Compiled form of both identities for one (problem, family) pair.
struct Checker {
    family: CompiledFamily,
    lagrangian: CompiledExpr,
    dynamics: Vec<CompiledExpr>,
}

impl Checker {
    fn new(p: &Problem, f: &TransformFamily) -> Result<Self> {
        if f.state_names != p.states || f.control_names != p.controls {
            return Err(Error::InvalidTransform(
                "variable names differ from the problem's".into(),
            ));
        }
        Ok(Checker {
            family: CompiledFamily::new(f)?,
            lagrangian: p.compiled_lagrangian()?,
            dynamics: p.compiled_dynamics()?,
        })
    }

    fn family_values(&self, pt: &SamplePoint) -> Vec<f64> {
        let mut vals = vec![0.0; 2 + self.family.n + self.family.m];
        self.family.fill(&mut vals, pt.t, &pt.x, &pt.u, pt.s);
        vals
    }

    /// `(d/dt t^s, (t^s, x^s, u^s))` at the sample.
    fn image(&self, vals: &[f64], pt: &SamplePoint) -> Result<(f64, Vec<f64>)> {
        let dts = self
            .family
            .time
            .total_derivative(vals, &pt.xdot, &pt.udot)?;
        let image = self
            .family
            .maps()
            .map(|m| Ok(m.value.eval(vals)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok((dts, image))
    }

    fn lagrangian_residual(&self, pt: &SamplePoint) -> Result<f64> {
        let vals = self.family_values(pt);
        let (dts, image) = self.image(&vals, pt)?;
        let transformed = self.lagrangian.eval(&image)?;
        let original = self.lagrangian.eval(&vals[..vals.len() - 1])?;
        let dgauge = self
            .family
            .gauge
            .total_derivative(&vals, &pt.xdot, &pt.udot)?;
        Ok((transformed * dts - original - dgauge).abs())
    }

    fn dynamics_residual(&self, pt: &SamplePoint) -> Result<Vec<f64>> {
        let vals = self.family_values(pt);
        let (dts, image) = self.image(&vals, pt)?;
        self.family
            .states
            .iter()
            .zip(&self.dynamics)
            .map(|(xs, phi)| {
                let lhs = xs.total_derivative(&vals, &pt.xdot, &pt.udot)?;
                let rhs = phi.eval(&image)? * dts;
                Ok((lhs - rhs).abs())
            })
            .collect()
    }

    fn draw(&self, p: &Problem, opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<SamplePoint> {
        let (t, x, u) = p.sample_point(&opts.region, rng);
        let udot = (0..p.n_controls())
            .map(|_| opts.udot_box.sample(rng))
            .collect();
        let s = opts.s_range.sample(rng);
        let xdot = eval_dynamics(&self.dynamics, t, &x, &u)?;
        Ok(SamplePoint {
            t,
            x,
            u,
            xdot,
            udot,
            s,
        })
    }
}

/// `|L(h^s)·d/dt t^s − L − d/dt Φ^s|` at `sample`.
pub fn lagrangian_residual(p: &Problem, f: &TransformFamily, sample: &SamplePoint) -> Result<f64> {
    Checker::new(p, f)?.lagrangian_residual(sample)
}

/// `|d/dt x_i^s − φ_i(h^s)·d/dt t^s|` for each state at `sample`. The sample
/// should lie on the control system (see [`SamplePoint::on_system`]).
pub fn dynamics_residual_identity(
    p: &Problem,
    f: &TransformFamily,
    sample: &SamplePoint,
) -> Result<Vec<f64>> {
    Checker::new(p, f)?.dynamics_residual(sample)
}

/// Evaluates both identities at `n_samples` random on-system points.
/// Deterministic for a given seed: sample `i` draws from its own stream.
pub fn verify(p: &Problem, f: &TransformFamily, opts: &VerifyOptions) -> Result<InvarianceReport> {
    let checker = Checker::new(p, f)?;
    let mut lag_max: f64 = 0.0;
    let mut dyn_max = vec![0.0f64; p.n_states()];
    let mut worst: Option<(f64, SamplePoint)> = None;
    let mut used = 0;
    let mut domain_errors = 0;
    for i in 0..opts.n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(i as u64);
        for _ in 0..=opts.max_retries {
            let evaluated = checker.draw(p, opts, &mut rng).and_then(|pt| {
                let lag = checker.lagrangian_residual(&pt)?;
                let dynr = checker.dynamics_residual(&pt)?;
                Ok((pt, lag, dynr))
            });
            match evaluated {
                Ok((pt, lag, dynr)) => {
                    used += 1;
                    lag_max = lag_max.max(lag);
                    for (m, r) in dyn_max.iter_mut().zip(&dynr) {
                        *m = m.max(*r);
                    }
                    let score = dynr.iter().fold(lag, |a, b| a.max(*b));
                    if worst.as_ref().is_none_or(|(w, _)| score > *w) {
                        worst = Some((score, pt));
                    }
                    break;
                }
                Err(Error::Eval(_)) => domain_errors += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let ok = used > 0 && lag_max <= opts.tolerance && dyn_max.iter().all(|r| *r <= opts.tolerance);
    Ok(InvarianceReport {
        lagrangian_max_residual: lag_max,
        dynamics_max_residual: dyn_max,
        samples_used: used,
        domain_errors,
        s_range: opts.s_range,
        tolerance: opts.tolerance,
        verdict: if ok {
            Verdict::Invariant
        } else {
            Verdict::Violated
        },
        worst_sample: worst.map(|(_, pt)| pt),
    })
}

fn control_free_gauge(p: &Problem, f: &TransformFamily) -> Result<()> {
    match p.controls.iter().find(|u| f.gauge.depends_on(u)) {
        Some(u) => Err(Error::ControlDependentGauge(u.clone())),
        None => Ok(()),
    }
}

/// `Φ^s(end) − Φ^s(start)` for arbitrary endpoint states. The gauge must not
/// depend on the controls.
pub fn gauge_difference(
    p: &Problem,
    f: &TransformFamily,
    start: (f64, &[f64]),
    end: (f64, &[f64]),
    s: f64,
) -> Result<f64> {
    control_free_gauge(p, f)?;
    let layout = f.symbols();
    let gauge = f.gauge.compile(&layout)?;
    // layout is [t, x.., u.., s]; controls stay zero since the gauge ignores them
    let at = |t: f64, x: &[f64]| -> Result<f64> {
        let mut vals = vec![0.0; layout.len()];
        vals[0] = t;
        vals[1..1 + x.len()].copy_from_slice(x);
        vals[layout.len() - 1] = s;
        Ok(gauge.eval(&vals)?)
    };
    Ok(at(end.0, end.1)? - at(start.0, start.1)?)
}

/// Constant cost shift `G(s) = Φ^s(t1, x_b) − Φ^s(t0, x_a)`, so that
/// `I^s = I + G(s)` for every admissible pair.
pub fn gauge_offset(p: &Problem, f: &TransformFamily, s: f64) -> Result<f64> {
    let (left, right): (Vec<f64>, Vec<f64>) = p.boundary.iter().copied().unzip();
    gauge_difference(p, f, (p.t0, &left), (p.t1, &right), s)
}
