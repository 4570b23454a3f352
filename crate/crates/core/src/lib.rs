//! Attribute-conditioned image aesthetic assessment on precomputed
//! backbone features.
//!
//! A multi-task [`attribute`] network maps a multi-level pooled backbone
//! embedding to style and composition predictions through a shared hidden
//! embedding. A hypernetwork ([`hyper`]) turns that embedding into the
//! weights of a per-image MLP that predicts the aesthetic score
//! distribution. [`metrics`] covers evaluation, [`data`] file formats and
//! sampling, and [`cli`] the command-line driver.

pub mod attribute;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod hyper;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
