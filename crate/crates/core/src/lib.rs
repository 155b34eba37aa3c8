//! Community-aware debiasing for implicit-feedback recommenders.
//!
//! The pipeline: split an interaction log, detect communities on the train
//! graph with Louvain, train a base embedding model (MF or LightGCN) with
//! BPR, then train an adversarially debiased model whose community
//! embeddings are made uninformative to a community discriminator, and fuse
//! both scorers per user. Evaluation covers ranking accuracy plus two
//! filter-bubble measures.

pub mod baselines;
pub mod community;
pub mod config;
pub mod conv;
pub mod dataset;
pub mod debias;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod model;
pub mod optim;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar used by training and checkpoints.
pub type Real = f32;
pub type Model = model::EmbeddingModel<Real>;
pub type ModelF64 = model::EmbeddingModel<f64>;
pub type Disc = discriminator::Discriminator<Real>;
pub type Embeddings = conv::Tables<Real>;
