//! Scalar expression trees over named variables.
//!
//! An [`Expr`] is built by [`parse`] (or the small constructor helpers below),
//! evaluated against a [`Binding`], differentiated symbolically with
//! [`Expr::diff`] and tidied with [`Expr::simplify_lite`]. Hot loops that
//! evaluate the same tree many times should go through [`Expr::compile`],
//! which resolves variable names to slot indices once.

mod compile;
mod diff;
mod parse;
mod simplify;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

pub use compile::CompiledExpr;
pub use parse::{parse, ParseError};

/// Unary operators and elementary functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

impl UnaryOp {
    pub fn function_name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Neg => None,
            UnaryOp::Exp => Some("exp"),
            UnaryOp::Log => Some("log"),
            UnaryOp::Sin => Some("sin"),
            UnaryOp::Cos => Some("cos"),
            UnaryOp::Sqrt => Some("sqrt"),
        }
    }

    pub fn from_function_name(name: &str) -> Option<UnaryOp> {
        match name {
            "exp" => Some(UnaryOp::Exp),
            "log" => Some(UnaryOp::Log),
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "sqrt" => Some(UnaryOp::Sqrt),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

/// Immutable expression tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// Failure while evaluating an expression.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(DomainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("log of non-positive value")]
    LogNonPositive,
    #[error("square root of negative value")]
    SqrtNegative,
    #[error("division by zero")]
    DivisionByZero,
    #[error("fractional power of negative value")]
    FractionalPowerOfNegative,
    #[error("non-finite result")]
    NonFinite,
}

/// Values for the free variables of an expression.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Binding(BTreeMap<String, f64>);

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.0.insert(name.to_owned(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }
}

impl<'a> FromIterator<(&'a str, f64)> for Binding {
    fn from_iter<I: IntoIterator<Item = (&'a str, f64)>>(iter: I) -> Self {
        Binding(iter.into_iter().map(|(k, v)| (k.to_owned(), v)).collect())
    }
}

pub(crate) fn apply_unary(op: UnaryOp, a: f64) -> Result<f64, DomainError> {
    let r = match op {
        UnaryOp::Neg => -a,
        UnaryOp::Exp => a.exp(),
        UnaryOp::Log => {
            if a <= 0.0 {
                return Err(DomainError::LogNonPositive);
            }
            a.ln()
        }
        UnaryOp::Sin => a.sin(),
        UnaryOp::Cos => a.cos(),
        UnaryOp::Sqrt => {
            if a < 0.0 {
                return Err(DomainError::SqrtNegative);
            }
            a.sqrt()
        }
    };
    finite(r)
}

pub(crate) fn apply_binary(op: BinaryOp, a: f64, b: f64) -> Result<f64, DomainError> {
    let r = match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => {
            if b == 0.0 {
                return Err(DomainError::DivisionByZero);
            }
            a / b
        }
        BinaryOp::Pow => {
            if a < 0.0 && b.fract() != 0.0 {
                return Err(DomainError::FractionalPowerOfNegative);
            }
            if a == 0.0 && b < 0.0 {
                return Err(DomainError::DivisionByZero);
            }
            if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
                a.powi(b as i32)
            } else {
                a.powf(b)
            }
        }
    };
    finite(r)
}

fn finite(r: f64) -> Result<f64, DomainError> {
    if r.is_finite() {
        Ok(r)
    } else {
        Err(DomainError::NonFinite)
    }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_owned())
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Div, a, b)
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Pow, a, b)
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Neg, a)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Evaluates the tree. Every free variable must be bound.
    pub fn eval(&self, binding: &Binding) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(name) => binding
                .get(name)
                .ok_or_else(|| EvalError::Unbound(name.clone())),
            Expr::Unary(op, a) => apply_unary(*op, a.eval(binding)?).map_err(EvalError::Domain),
            Expr::Binary(op, a, b) => {
                let a = a.eval(binding)?;
                let b = b.eval(binding)?;
                apply_binary(*op, a, b).map_err(EvalError::Domain)
            }
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Unary(_, a) => a.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn depends_on(&self, name: &str) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => v == name,
            Expr::Unary(_, a) => a.depends_on(name),
            Expr::Binary(_, a, b) => a.depends_on(name) || b.depends_on(name),
        }
    }

    /// Replaces every occurrence of variable `name` with `with`.
    pub fn substitute(&self, name: &str, with: &Expr) -> Expr {
        match self {
            Expr::Var(v) if v == name => with.clone(),
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Unary(op, a) => Expr::unary(*op, a.substitute(name, with)),
            Expr::Binary(op, a, b) => {
                Expr::binary(*op, a.substitute(name, with), b.substitute(name, with))
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }
}

/// Canonical printer: fully parenthesized infix that [`parse`] reads back.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "(-{})", -c)
            }
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.function_name().unwrap_or("?")),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}
