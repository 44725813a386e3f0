//! Uncertainty-aware surrogate modeling with a conditional normalizing flow,
//! plus preference-guided genetic exploration of simulation parameter space.
//!
//! Pipeline: an [`autoencoder`] compresses simulation fields into latents; a
//! conditional [`flow`] models `p(latent | parameters)` and supports reverse
//! prediction of parameters from a latent; [`surrogate`] turns the frozen
//! models into prediction services; [`explorer`] runs the genetic search.

pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod explorer;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod surrogate;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{FieldGrid, Latent, ParamVector};
