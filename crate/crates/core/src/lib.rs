//! Distributed inexact successive-convex-approximation ADMM for non-convex
//! consensus problems, with a fusion-centric engine, a decentralized engine
//! over a graph, a deterministic asynchrony simulator and convergence
//! diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decentralized;
pub mod diagnostics;
pub mod error;
pub mod function;
pub mod fusion;
pub mod inexact;
pub mod problem;
pub mod problems;
mod rng;
pub mod schedule;
pub mod surrogates;
pub mod trace;

pub use error::{Error, Result};
pub use function::{SharedFn, SmoothFn, Vector};
pub use problem::{ConsensusProblem, CoordMask, FeasibleSet, NodeLoss, Nonsmooth, Regularizer};
pub use schedule::{DelayModel, Schedule};
pub use trace::RunTrace;
