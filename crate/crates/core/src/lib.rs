//! Distributed inexact damped Newton method for L2-regularized empirical risk
//! minimization, with sample-partitioned and feature-partitioned PCG inner
//! solvers running on an in-process cluster that meters every collective.

pub mod collectives;
pub mod data;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod precond;
pub mod solver;
pub mod sparse;
pub mod synth;
pub mod trace;

pub use error::{Error, ParseError, Result};
