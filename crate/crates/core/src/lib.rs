//! Lymph-node metastasis prediction pipeline on synthetic phantom data.
//!
//! The crate provides:
//! - [`corpus`]: patient/patch data model, a deterministic phantom generator
//!   with a documented labeling oracle, and lossless on-disk storage;
//! - [`preprocess`]: intensity normalization, patch selection and stochastic
//!   augmentation;
//! - [`morphometry`]: size and border-irregularity features from masks;
//! - [`nn`]: a small f64 neural-network substrate with hand-written backprop;
//! - [`vae`]: convolutional variational autoencoder, composite loss with KLD
//!   annealing, training loop and reconstruction metrics;
//! - [`mil`]: the two-stage multiple-instance classifier over node latents,
//!   morphometric features and clinical covariates;
//! - [`evaluation`]: classification metrics, nested cross-validation,
//!   hyperparameter search, ablations and uncertainty accumulation;
//! - [`insight`]: encoder saliency maps, latent clustering statistics and
//!   latent growth-direction traversal.

pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod insight;
pub mod mil;
pub mod morphometry;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod vae;

pub use error::{LnmError, Result};
