//! Multi-agent distribution matching with optimal transport.
//!
//! Each cycle the team picks local transport plans against a discrete target
//! measure, steers every agent to its plan's barycenter, and records the
//! surrogate cost and the exact 2-Wasserstein distance.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod cli;
pub mod control;
pub mod decentral;
pub mod engine;
pub mod error;
pub mod measures;
pub mod numeric;

pub use error::{Error, Result};
