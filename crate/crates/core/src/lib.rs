//! Removal-based explanations for black-box video classifiers.
//!
//! A video is segmented into regions, regions are removed in sampled
//! coalitions, the perturbed videos are scored by a [`predictor::Predictor`],
//! and an explainer turns the (coalition, score) pairs into relevance. The
//! [`pipeline`] module wires the stages together; [`evaluation`] scores the
//! resulting saliency and [`visualization`] renders it.

#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod error;
pub mod evaluation;
pub mod explain;
pub mod io;
pub mod par;
pub mod perturbation;
pub mod pipeline;
pub mod predictor;
pub mod segmentation;
pub mod synth;
pub mod tensor;
pub mod visualization;

pub use error::{Error, Result};
pub use explain::{Method, RegionRelevance, SaliencyVolume};
pub use segmentation::SegmentationMap;
pub use tensor::{BlurParams, Dims, VideoTensor};
