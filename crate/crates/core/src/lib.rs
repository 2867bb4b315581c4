//! Learned, low-bitrate skin-colour embeddings for counterfactual colour
//! transfer, editing, dataset augmentation and colour normalization.

pub mod codec;
pub mod decolour;
pub mod embedding;
pub mod error;
pub mod image;
pub mod latent;
pub mod manifest;
pub mod pipelines;
pub mod postprocess;
pub mod service;
pub mod synthbench;

pub use embedding::{ColourEmbedding, EMBEDDING_DIM};
pub use error::{Error, Result};
pub use image::{ColourlessImage, RgbImage};
