//! Generalized FBI transforms of concretely represented analytic functionals.
//!
//! The crate evaluates `𝓕ₚμ(τ,ξ) = c_p μ_w(e^{i(τ−w)ξ − |ξ|p(τ−w)})` for
//! densities, point combinations and wedge boundary values, classifies the
//! directional decay of the transform against a family of regularity
//! conditions, and audits elliptic regularity through a finite symbol
//! calculus. Every universally quantified condition is replaced by a finite,
//! documented surrogate; verdicts carry the caps they were decided under.

pub mod classify;
pub mod cli;
pub mod cones;
pub mod elliptic;
pub mod error;
pub mod fbi;
pub mod fit;
pub mod functional;
pub mod jet;
pub mod operator;
pub mod phase;
pub mod quad;
pub mod scaled;
pub mod sequences;
pub mod symbol;

pub use error::{Error, Result};
