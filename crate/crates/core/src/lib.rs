//! Simulation and estimation for random affine recursions
//! `X_{n+1} = A_{n+1} X_n + B_{n+1}` with i.i.d. pairs `(A_n, B_n)`.
//!
//! - [`linalg`]: small dense matrices, operator norm, inversion.
//! - [`model`]: laws of `(A, B)`, including SGD and (G)ARCH embeddings.
//! - [`spectral`]: Lyapunov exponent, moment function, tail index.
//! - [`exit`]: exit times from balls, coupling and sandwich checks.
//! - [`scaling`]: exit-time scaling fits and the Hill estimator.
//! - [`audit`]: Monte Carlo checks of the standing assumptions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod error;
pub mod exit;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod scaling;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use model::{AffineLaw, AffineMapSample, Model, ModelSpec, ScalarLaw};
pub use rng::RngStream;
