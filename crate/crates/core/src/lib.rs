//! Estimation of Monge optimal transport maps between sampled distributions.
//!
//! The crate trains a neural transport map `T` and a dual potential `f`
//! against each other on mini-batches drawn from the two marginals, for an
//! arbitrary registered transport cost. Exact small-instance solvers
//! ([`oracles`]) and duality-gap diagnostics ([`duality`]) certify what the
//! adversarial training produced.
//!
//! Module map:
//!
//! - [`tensor`]: dense row-major `f64` tensors.
//! - [`nn`]: network specs, parameter layout, forward/reverse evaluation,
//!   Adam and parameter averaging.
//! - [`costs`]: transport cost functions `c(x, y)` with analytic gradients.
//! - [`solver`]: the alternating max–min training loop.
//! - [`duality`]: c-transforms, gap estimates `E1`/`E2` and the posterior
//!   error bound `sqrt(2 (E1 + E2))`.
//! - [`oracles`]: exact assignment, log-domain Sinkhorn, 1D monotone
//!   rearrangement, Gaussian closed form.
//! - [`geo`]: spherical coordinates, land-set ingestion and the map-to-land
//!   snap transform.

// Indexed loops are the idiom for the dense kernels here.
#![allow(clippy::needless_range_loop)]

pub mod costs;
pub mod duality;
pub mod error;
pub mod geo;
pub mod nn;
pub mod oracles;
pub mod rng;
pub mod solver;
pub mod tensor;

pub use error::{CostError, Error, Result};
pub use tensor::Tensor;
