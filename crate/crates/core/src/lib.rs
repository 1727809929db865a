//! Pool-based active learning for temporal action spotting.
//!
//! The crate covers the whole loop at desk scale: synthetic per-frame feature
//! videos ([`dataset`]), a small trainable spotting model ([`model`]), 1-D NMS
//! inference ([`spotting`]), uncertainty and entropy sampling ([`selection`]),
//! tolerance-based mAP and learning-curve metrics ([`metrics`]), and the
//! orchestration of train, select and annotate rounds ([`harness`]).

pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod selection;
pub mod spotting;

pub use error::{Error, Result};
