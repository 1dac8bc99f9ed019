//! Multi-stage sampling for hierarchical models with funnel geometry.
//!
//! The crate samples a generalized (higher-dimensional) hierarchical model,
//! learns the marginal density of its hyper-parameters with a normalizing
//! flow, and resamples that density on the surface that embeds the original
//! hyper-model. Naive, prior-reparameterized and conditional-posterior
//! reparameterized baselines share the same HMC engine.

pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod hmc;
pub mod io;
pub mod model;
pub mod models;
pub mod pipeline;
pub mod reparam;
pub mod report;
pub mod rng;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
