//! Adapting a basis of two-dimensional Gabor functions to image statistics.
//!
//! The pipeline: whiten images and sample patches ([`imageio`]), infer sparse
//! MAP codes for a rendered basis ([`inference`]), adapt the five learnable
//! parameters of every atom with an EM-style rule ([`learning`]), fit the
//! resulting parameter distributions ([`fitstats`]) and draw new bases from
//! analytical models of them ([`genmodel`]).

pub mod benchmark;
pub mod corpus;
pub mod error;
pub mod fitstats;
pub mod gabor;
pub mod genmodel;
pub mod imageio;
pub mod inference;
pub mod learning;
pub mod linalg;
pub mod mosaic;
pub mod rng;

pub use error::{Error, Result};
pub use gabor::{FieldMatrix, GaborBasis, GaborParams, Grid, Param};
pub use genmodel::{GenModelSpec, Variant};
pub use imageio::{PatchBatch, PatchStream, PipelineConfig, RawImage};
pub use inference::{Coder, InferenceConfig, SparseCode};
pub use learning::{LearningConfig, NonparamConfig, Rates};
