//! Implicit causal representation learning from soft interventions.
//!
//! The crate covers the whole synthetic pipeline: ground-truth graphs and
//! location-scale SCMs ([`graph`], [`scm`], [`dataset`]), the augmented implicit
//! causal model with per-variable mechanism switches ([`model`]), variational
//! training ([`trainer`]) and DCI scoring of the recovered causal variables
//! ([`dci`]).

pub mod dataset;
pub mod dci;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scm;
pub mod trainer;

pub use error::{Error, Result};
