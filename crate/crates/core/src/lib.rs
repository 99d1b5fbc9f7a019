//! Partially identified causal outcome intervals from modulated ensembles.
//!
//! An ensemble of conditional outcome predictors yields a mixture of
//! per-member predictive distributions. Under hidden confounding, a
//! sensitivity model bounds how far each member's weight in that mixture may
//! move away from one; the widest interval over all admissible weightings is
//! the partially identified outcome interval.
//!
//! Modules, bottom-up:
//! - [`dist`]: Gaussian/Cauchy components and weighted mixtures.
//! - [`sensitivity`]: weight bounds from the marginal sensitivity model.
//! - [`modulate`]: extreme-quantile search over weights, intervals, oracles.
//! - [`ensemble`]: small sigmoid MLP ensembles trained by maximum likelihood.
//! - [`benchgen`]: semi-synthetic hidden-confounding benchmark generator.
//! - [`eval`]: coverage, interval costs and the smallest-Γ search.
//! - [`oracle`]: randomized greedy-versus-exhaustive optimizer checks.
//! - [`cli`]: the `modens` command-line surface.

pub mod benchgen;
pub mod cli;
pub mod dist;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod modulate;
pub mod oracle;
pub mod par;
pub mod sensitivity;

pub use error::{ModensError, Result};
