//! Counterfactual explanations for graph classifiers by gradient-guided
//! traversal of the latent space of a permutation-equivariant graph VAE.

pub mod autodiff;
pub mod cgcf;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod dataset;
pub mod equivariant;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod vae;

pub use error::{Error, Result};
