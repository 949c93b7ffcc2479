//! Safety-aware chunked behavior cloning.
//!
//! A planar-arm reach task with a scripted expert ([`sim`]), demonstration
//! logs and chunk sampling ([`data`]), a small dense network core with exact
//! gradients ([`nn`]), a CVAE action-chunking policy ([`policy`]), the
//! Huber + KL + curriculum-weighted contrastive objective ([`loss`]), the
//! training loop ([`train`]) and the safety-centric evaluation metrics
//! ([`metrics`]).

pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod textfmt;
pub mod train;

pub use error::{Error, Result};
