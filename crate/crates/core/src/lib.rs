//! Contraction-constrained model predictive control over non-uniform,
//! multi-timescale prediction horizons.
//!
//! Modules follow the data flow: plant [`model`]s, offline
//! [`contraction`] certificates, Riemannian distances in [`riemann`], the
//! receding-horizon controller in [`mpc`], closed-loop runs and timing in
//! [`sim`], and file-driven scenarios in [`scenario`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contraction;
pub mod error;
pub mod linalg;
pub mod model;
pub mod mpc;
pub mod par;
pub mod riemann;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
