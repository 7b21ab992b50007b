//! Video-query moment retrieval with multi-graph feature fusion.
//!
//! A query clip and a candidate proposal are encoded by two LSTMs, their
//! timesteps joined into one graph with intra-video band edges and
//! inter-video stride edges, fused by stacked graph convolutions and pooled
//! into a similarity score plus boundary offsets. Training uses a triplet
//! margin loss and an L1 offset loss; evaluation reports the fraction of
//! queries whose refined top proposal clears each temporal-IoU threshold.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod model;
pub mod numeric;
pub mod proposals;
pub mod training;

pub use error::{Error, Result};
pub use numeric::{Matrix, ParamStore, Tape, Var};
