//! Graph-prior aligned variational autoencoders for generalized zero-shot
//! learning.
//!
//! Two modality-specific VAEs (image features and class attributes) share a
//! latent space. Learned Gaussian embeddings of a label-relation graph act as
//! priors that pull encodings towards related nodes and away from unrelated
//! ones. A softmax classifier trained on latent samples is then evaluated with
//! the usual unseen / seen / harmonic-mean protocol.

pub mod autodiff;
pub mod bundle;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod export;
pub mod gaussian;
pub mod gradsuite;
pub mod graph;
pub mod loss;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
