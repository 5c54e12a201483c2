//! Absolute minimizers by transformation methods.
//!
//! The crate covers two routes to certified global minima:
//!
//! * optimal control problems in Lagrange form, solved by embedding them in a
//!   one-parameter family generated by a variational symmetry, picking the
//!   family member whose minimizer is obvious, and mapping that minimizer back
//!   ([`invariance`], [`stsolver`]);
//! * scalar calculus-of-variations problems, where an Euler-Lagrange extremal
//!   is certified by convexity plus a one-parameter field of extremals
//!   ([`calcvar`]).
//!
//! [`numcheck`] is an independent direct-transcription optimizer used to
//! cross-validate both.

pub mod calcvar;
mod error;
pub mod expr;
pub mod invariance;
pub mod model;
pub mod numcheck;
pub mod ode;
pub mod quadrature;
pub mod stsolver;

pub use error::{Error, Result};
