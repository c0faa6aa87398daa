//! Blind ×4 video super-resolution around a learned kernel dictionary.
//!
//! Per-pixel blur kernels are modeled as mixtures over a small dictionary of
//! kernel atoms, each atom a coordinate network rendered onto odd-sized grids
//! at several scales. A recurrent transformer predicts the mixing
//! coefficients per frame; the same spatially-varying filter then serves two
//! roles inside the restoration network: correcting each blurred input frame
//! and aligning warped neighbor features. Training, evaluation, degradation
//! synthesis, and checkpointing are all driven from [`config::RunConfig`].
//!
//! Layout:
//! - numerics and parameters: [`param`], [`nn`], [`resize`], [`warp`]
//! - kernel machinery: [`dictionary`], [`filtering`]
//! - coefficient prediction: [`transformer`]
//! - restoration network: [`model`], [`flow`]
//! - data and degradation: [`sequence`], [`degradation`], [`data`]
//! - optimization: [`loss`], [`train`], [`checkpoint`]
//! - measurement: [`metrics`], [`eval`], [`selftest`], [`plot`]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod degradation;
pub mod dictionary;
pub mod error;
pub mod eval;
pub mod filtering;
pub mod flow;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod param;
pub mod plot;
pub mod resize;
pub mod selftest;
pub mod sequence;
pub mod train;
pub mod transformer;
pub mod warp;

pub use config::RunConfig;
pub use error::{IkError, Result};
pub use model::{VsrModel, UPSCALE};
