//! Geospatial interpretability of language-model activations.
//!
//! The pipeline turns gazetteer entries into disambiguated placename prompts
//! ([`gazetteer`]), stores their mean-pooled activations ([`tensor_io`]),
//! tests every unit for spatial autocorrelation with global and local
//! Moran's I ([`spatial`], [`report`]) and decomposes activations into sparse
//! features with a TopK sparse autoencoder ([`sae`]).

pub mod error;
pub mod gazetteer;
pub mod report;
pub mod rng;
pub mod sae;
pub mod spatial;
pub mod tensor_io;

pub use error::{Error, Result};
