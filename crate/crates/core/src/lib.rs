//! Non-intrusive reduced-order models and their space-dependent aggregation.
//!
//! A reduced-order model ([`rom::Rom`]) compresses parametric snapshots with a
//! linear or nonlinear reduction and approximates the map from parameters to
//! latent codes. Several such models are then blended pointwise with convex
//! weights regressed over space and parameter features
//! ([`aggregation::MixtureModel`]).

pub mod aggregation;
pub mod bench;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod latentmap;
pub mod neuralnet;
pub mod reduction;
pub mod rom;
pub mod seed;

pub use error::{Error, Result};
