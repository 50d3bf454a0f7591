//! Next point-of-interest recommendation from check-in logs.
//!
//! The crate covers the whole pipeline: parsing and segmenting Foursquare
//! style check-in dumps ([`corpus`]), the static spatial, temporal,
//! categorical and social context derived from training trajectories
//! ([`context`]), node2vec graph embeddings for POIs and categories
//! ([`embedding`]), the long-term and short-term preference encoders
//! ([`long_term`], [`short_term`]), and training, evaluation and ablation
//! ([`model`], [`train`], [`metrics`], [`experiments`]).
//!
//! Numerics run on a small reverse-mode autodiff tape ([`autograd`]) over
//! `ndarray` matrices in `f64`.

pub mod autograd;
pub mod config;
pub mod context;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod experiments;
pub mod geo;
pub mod long_term;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod sample;
pub mod short_term;
pub mod store;
pub mod synthetic;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use config::PipelineConfig;
pub use error::{Error, Result};
