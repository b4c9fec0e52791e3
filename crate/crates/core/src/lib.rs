//! Numerical engine for connections on vector fibre bundles over a single
//! coordinate patch.
//!
//! Index conventions used throughout:
//! - Base coordinates `x^μ` (μ = 0..n), fibre coordinates `u^a` (a = 0..r);
//!   a bundle point is the tuple `(x^0..x^{n-1}, u^0..u^{r-1})`.
//! - 3-index coefficients are stored per base direction: `gamma[mu]` is the
//!   r×r matrix with entry `(a, b)` equal to `Γ^a_{bμ}`.
//! - 2-index coefficients are an r×n matrix with entry `(a, mu)` = `Γ^a_μ`.
//! - Frame matrices have the components of the μ-th frame vector in column μ.

pub mod calculus;
pub mod connection;
mod error;
pub mod expr;
pub mod fields;
pub mod morphism;
pub mod registry;
pub mod tolerances;
pub mod transport;

pub use error::{Error, Result};
