//! Stationary-reweighted soft fitted Q-iteration on exactly solvable
//! tabular MDPs, with numerical certification of the local-contraction
//! geometry of the soft Bellman operator and a reproducible experiment
//! harness.
//!
//! Modules mirror the pipeline:
//!
//! - [`mdp`]: tabular MDPs, Garnet instances, behavior policies, datasets.
//! - [`soft_bellman`]: softmax policies, the soft Bellman operator, exact
//!   solves, and operator derivatives.
//! - [`stationary`]: stationary distributions, weighted-L2 geometry,
//!   density ratios, projections, contraction profiles.
//! - [`features`]: linear function classes (realizable and one-hot).
//! - [`fqi`]: population and fitted soft Q-iteration with pluggable
//!   regression weights and temperature homotopy.
//! - [`diagnostics`]: derivative oracles, contraction certificates,
//!   remainder-bound checks, action-gap measurement.
//! - [`experiment`]: declarative experiment runner, seed sweeps,
//!   persistence, aggregation, verification suite, plot emission.

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod features;
pub mod fqi;
pub mod mdp;
pub mod rng;
pub mod soft_bellman;
pub mod stationary;

pub use error::{Error, Result};
