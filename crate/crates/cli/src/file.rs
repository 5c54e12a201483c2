//! The `.ocp` problem-file format.
//!
//! ```text
//! # comment
//! [problem]
//! states = x1, x2
//! controls = u1, u2
//! t0 = 0
//! t1 = 1
//! lagrangian = u1^2 + u2^2
//! dynamics.x1 = exp(u1) + u1 + u2
//! boundary.x1 = 0, 2
//! bounds.u1 = -1, 1        # or `free`; absent means free
//!
//! [transform]              # absent maps are the identity, gauge defaults to 0
//! t = t
//! x1 = x1 + s*t
//! gauge = s^2*t + 2*s*x2
//!
//! [candidate]              # one expression in t per control
//! u1 = 0
//!
//! [variational]            # instead of [problem]
//! state = x                # derivative symbol is `<state>dot`
//! t0 = 0
//! t1 = 1
//! integrand = xdot^2 + t*xdot
//! boundary = 0, 0
//! family = ...             # optional, over t and beta
//! beta_star = 0            # optional
//! ```

use std::collections::BTreeMap;

use absmin_core::calcvar::{ExtremalFamily, VariationalProblem, BETA};
use absmin_core::expr::{parse, Binding, Expr, ParseError};
use absmin_core::model::{CandidateControl, Interval, Problem, TransformFamily, PARAM, TIME};
use thiserror::Error;

/// A problem-file error at a 1-based line and column.
#[derive(Clone, Debug, PartialEq, Error)]
#[error("{line}:{col}: {message}")]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

fn diag<T>(line: usize, col: usize, message: impl Into<String>) -> Result<T, Diagnostic> {
    Err(Diagnostic {
        line,
        col,
        message: message.into(),
    })
}

#[derive(Clone, Debug)]
pub struct VariationalInput {
    pub problem: VariationalProblem,
    /// User-supplied family; when absent it is derived from the extremal.
    pub family: Option<ExtremalFamily>,
}

#[derive(Clone, Debug)]
pub struct ProblemFile {
    pub problem: Option<Problem>,
    pub transform: Option<TransformFamily>,
    pub candidate: Option<CandidateControl>,
    pub variational: Option<VariationalInput>,
}

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
    /// Column of the first value character.
    col: usize,
}

#[derive(Debug, Default)]
struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn require(&mut self, key: &str, section: &str) -> Result<Entry, Diagnostic> {
        self.take(key).map_or_else(
            || diag(self.line, 1, format!("[{section}] is missing `{key}`")),
            Ok,
        )
    }

    fn reject_leftovers(self) -> Result<(), Diagnostic> {
        match self.entries.into_iter().min_by_key(|(_, e)| e.line) {
            Some((k, e)) => diag(e.line, 1, format!("unknown key `{k}`")),
            None => Ok(()),
        }
    }
}

const SECTIONS: [&str; 4] = ["problem", "transform", "candidate", "variational"];

fn split_sections(src: &str) -> Result<BTreeMap<&'static str, Section>, Diagnostic> {
    let mut sections: BTreeMap<&'static str, Section> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        let text = raw.split('#').next().unwrap_or("");
        let trimmed = text.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = text.len() - text.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return diag(line, indent + 1, "unterminated section header");
            };
            let Some(&known) = SECTIONS.iter().find(|s| **s == name.trim()) else {
                return diag(
                    line,
                    indent + 2,
                    format!("unknown section `{}`", name.trim()),
                );
            };
            if sections.contains_key(known) {
                return diag(line, indent + 1, format!("section [{known}] appears twice"));
            }
            sections.insert(
                known,
                Section {
                    line,
                    entries: BTreeMap::new(),
                },
            );
            current = Some(known);
            continue;
        }
        let Some(sec) = current else {
            return diag(line, indent + 1, "entry outside of any section");
        };
        let Some(eq) = text.find('=') else {
            return diag(line, indent + 1, "expected `key = value`");
        };
        let key = text[..eq].trim();
        if key.is_empty() {
            return diag(line, indent + 1, "missing key before `=`");
        }
        let after = &text[eq + 1..];
        let value = after.trim();
        let col = text[..eq + 1].chars().count()
            + (after.chars().count() - after.trim_start().chars().count())
            + 1;
        let entries = &mut sections
            .get_mut(sec)
            .expect("current section exists")
            .entries;
        if entries.contains_key(key) {
            return diag(line, indent + 1, format!("`{key}` given twice"));
        }
        entries.insert(
            key.to_owned(),
            Entry {
                value: value.to_owned(),
                line,
                col,
            },
        );
    }
    Ok(sections)
}

fn parse_error(e: &Entry, offset: usize, err: ParseError) -> Diagnostic {
    let message = match &err {
        ParseError::Syntax { msg, .. } => msg.clone(),
        ParseError::UndeclaredSymbol { name, .. } => format!("undeclared symbol `{name}`"),
    };
    Diagnostic {
        line: e.line,
        col: e.col + offset + err.position(),
        message,
    }
}

fn expr_at<S: AsRef<str>>(
    e: &Entry,
    text: &str,
    offset: usize,
    allowed: &[S],
) -> Result<Expr, Diagnostic> {
    parse(text, allowed).map_err(|err| parse_error(e, offset, err))
}

fn expr<S: AsRef<str>>(e: &Entry, allowed: &[S]) -> Result<Expr, Diagnostic> {
    if e.value.is_empty() {
        return diag(e.line, e.col, "expected an expression");
    }
    expr_at(e, &e.value, 0, allowed)
}

fn number_at(e: &Entry, text: &str, offset: usize) -> Result<f64, Diagnostic> {
    let trimmed = text.trim();
    let lead = text.len() - text.trim_start().len();
    if trimmed.is_empty() {
        return diag(e.line, e.col + offset, "expected a number");
    }
    let none: [&str; 0] = [];
    let ex = expr_at(e, trimmed, offset + lead, &none)?;
    match ex.eval(&Binding::new()) {
        Ok(v) => Ok(v),
        Err(err) => diag(e.line, e.col + offset + lead, format!("{err}")),
    }
}

fn number(e: &Entry) -> Result<f64, Diagnostic> {
    number_at(e, &e.value, 0)
}

fn pair(e: &Entry) -> Result<(f64, f64), Diagnostic> {
    let parts: Vec<&str> = e.value.split(',').collect();
    if parts.len() != 2 {
        return diag(e.line, e.col, "expected two comma-separated numbers");
    }
    let a = number_at(e, parts[0], 0)?;
    let b = number_at(e, parts[1], parts[0].chars().count() + 1)?;
    Ok((a, b))
}

fn names(e: &Entry) -> Result<Vec<String>, Diagnostic> {
    if e.value.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut offset = 0;
    for part in e.value.split(',') {
        let name = part.trim();
        let lead = part.len() - part.trim_start().len();
        let valid = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return diag(
                e.line,
                e.col + offset + lead,
                format!("`{name}` is not a valid name"),
            );
        }
        if name == TIME || name == PARAM {
            return diag(
                e.line,
                e.col + offset + lead,
                format!("`{name}` is reserved"),
            );
        }
        out.push(name.to_owned());
        offset += part.chars().count() + 1;
    }
    Ok(out)
}

fn core_error(line: usize, err: absmin_core::Error) -> Diagnostic {
    Diagnostic {
        line,
        col: 1,
        message: err.to_string(),
    }
}

fn build_problem(mut sec: Section) -> Result<Problem, Diagnostic> {
    let header = sec.line;
    let states_entry = sec.require("states", "problem")?;
    let states = names(&states_entry)?;
    let controls = match sec.take("controls") {
        Some(e) => names(&e)?,
        None => Vec::new(),
    };
    let t0 = number(&sec.require("t0", "problem")?)?;
    let t1 = number(&sec.require("t1", "problem")?)?;
    let symbols: Vec<String> = std::iter::once(TIME.to_owned())
        .chain(states.iter().cloned())
        .chain(controls.iter().cloned())
        .collect();
    let lagrangian = expr(&sec.require("lagrangian", "problem")?, &symbols)?;
    let mut dynamics = Vec::new();
    let mut boundary = Vec::new();
    for x in &states {
        dynamics.push(expr(
            &sec.require(&format!("dynamics.{x}"), "problem")?,
            &symbols,
        )?);
        boundary.push(pair(&sec.require(&format!("boundary.{x}"), "problem")?)?);
    }
    let mut control_bounds = Vec::new();
    for u in &controls {
        control_bounds.push(match sec.take(&format!("bounds.{u}")) {
            Some(e) if e.value == "free" => None,
            Some(e) => {
                let (lo, hi) = pair(&e)?;
                if !(lo <= hi) {
                    return diag(e.line, e.col, format!("bounds of `{u}` have lower > upper"));
                }
                Some(Interval::new(lo, hi))
            }
            None => None,
        });
    }
    sec.reject_leftovers()?;
    let p = Problem {
        states,
        controls,
        t0,
        t1,
        lagrangian,
        dynamics,
        boundary,
        control_bounds,
    };
    p.validate().map_err(|e| core_error(header, e))?;
    Ok(p)
}

fn build_transform(mut sec: Section, p: &Problem) -> Result<TransformFamily, Diagnostic> {
    let mut f = TransformFamily::identity(p);
    let symbols = f.symbols();
    if let Some(e) = sec.take(TIME) {
        f.time_map = expr(&e, &symbols)?;
    }
    for (i, x) in p.states.iter().enumerate() {
        if let Some(e) = sec.take(x) {
            f.state_maps[i] = expr(&e, &symbols)?;
        }
    }
    for (j, u) in p.controls.iter().enumerate() {
        if let Some(e) = sec.take(u) {
            f.control_maps[j] = expr(&e, &symbols)?;
        }
    }
    if let Some(e) = sec.take("gauge") {
        f.gauge = expr(&e, &symbols)?;
    }
    let header = sec.line;
    sec.reject_leftovers()?;
    f.validate(p).map_err(|e| core_error(header, e))?;
    Ok(f)
}

fn build_candidate(mut sec: Section, p: &Problem) -> Result<CandidateControl, Diagnostic> {
    let mut controls = Vec::new();
    for u in &p.controls {
        controls.push(expr(&sec.require(u, "candidate")?, &[TIME])?);
    }
    let header = sec.line;
    sec.reject_leftovers()?;
    CandidateControl::new(controls).map_err(|e| core_error(header, e))
}

fn build_variational(mut sec: Section) -> Result<VariationalInput, Diagnostic> {
    let header = sec.line;
    let state_name = match sec.take("state") {
        Some(e) => {
            let mut n = names(&e)?;
            if n.len() != 1 {
                return diag(e.line, e.col, "expected exactly one state name");
            }
            n.remove(0)
        }
        None => "x".to_owned(),
    };
    let t0 = number(&sec.require("t0", "variational")?)?;
    let t1 = number(&sec.require("t1", "variational")?)?;
    let mut vp = VariationalProblem {
        state_name,
        t0,
        t1,
        integrand: Expr::constant(0.0),
        boundary: pair(&sec.require("boundary", "variational")?)?,
    };
    vp.integrand = expr(&sec.require("integrand", "variational")?, &vp.symbols())?;
    let family = match sec.take("family") {
        Some(e) => Some(ExtremalFamily {
            xi: expr(&e, &[TIME, BETA])?,
            beta_star: match sec.take("beta_star") {
                Some(b) => number(&b)?,
                None => 0.0,
            },
        }),
        None => None,
    };
    sec.reject_leftovers()?;
    vp.validate().map_err(|e| core_error(header, e))?;
    Ok(VariationalInput {
        problem: vp,
        family,
    })
}

/// Parses and validates a problem file.
pub fn parse_problem_file(src: &str) -> Result<ProblemFile, Diagnostic> {
    let mut sections = split_sections(src)?;
    let problem_sec = sections.remove("problem");
    let variational_sec = sections.remove("variational");
    let mut out = ProblemFile {
        problem: None,
        transform: None,
        candidate: None,
        variational: None,
    };
    match (problem_sec, variational_sec) {
        (Some(_), Some(v)) => {
            return diag(
                v.line,
                1,
                "a file holds either [problem] or [variational], not both",
            )
        }
        (None, None) => return diag(1, 1, "no [problem] or [variational] section"),
        (None, Some(v)) => {
            if let Some(other) = sections.values().next() {
                return diag(
                    other.line,
                    1,
                    "[transform] and [candidate] need a [problem] section",
                );
            }
            out.variational = Some(build_variational(v)?);
        }
        (Some(p), None) => {
            let problem = build_problem(p)?;
            if let Some(t) = sections.remove("transform") {
                out.transform = Some(build_transform(t, &problem)?);
            }
            if let Some(c) = sections.remove("candidate") {
                out.candidate = Some(build_candidate(c, &problem)?);
            }
            out.problem = Some(problem);
        }
    }
    Ok(out)
}
