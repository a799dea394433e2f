//! Analysis, design, and numerical verification of r-neighbor bootstrap
//! percolation on Galton-Watson trees.
//!
//! The survival probability of the root obeys the scalar recursion
//! `phi_{t+1} = h(phi_t)` with `phi_0 = q`, where `h(x) = q * x * g(x)` and
//! `g` is a polynomial (or series) determined by the offspring distribution
//! and the infection threshold `r`. Everything in this crate is organized
//! around that recursion:
//!
//! - [`ratpoly`]: exact rational polynomial arithmetic, root isolation, and
//!   the mixed `{g_k} +` monomial basis used by the designer.
//! - [`offspring`]: offspring distributions, the `g_k` building blocks, and
//!   the exact heavy-tail family with `g ≡ 1`.
//! - [`dynamics`]: the recursion itself — critical `q`, transition
//!   classification, plateau measurement, critical decay.
//! - [`designer`]: constructs distributions whose `g` has prescribed maxima
//!   `(x_i, nu_i)`, with exact positivity certificates.
//! - [`mcsim`]: Monte Carlo cross-validation on sampled trees.
//! - [`bifurcation`]: decay/exit-time bounds for the one-dimensional
//!   bottleneck maps that govern plateau passage.
//!
//! Exact quantities are `BigRational`; measurement loops run in `f64` or,
//! where roundoff would drown the signal, arbitrary-precision floats (see
//! [`precision`]).

// Float validations are written `!(x > 0.0)` so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bifurcation;
pub mod designer;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod mcsim;
pub mod offspring;
pub mod precision;
pub mod ratpoly;
pub mod ratio_serde;

pub use error::{Error, Result};
pub use ratpoly::{Rat, RatPoly};

/// Version string stamped into every CLI manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Schema tag carried by all JSON reports.
pub const SCHEMA: &str = "gwboot/1";
