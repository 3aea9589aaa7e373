//! Attention-steered text-conditioned video object segmentation at desk scale.

pub mod backends;
pub mod config;
pub mod error;
pub mod eval;
pub mod formats;
pub mod numerics;
pub mod pipeline;
pub mod prompting;
pub mod rollout;
pub mod steering;
pub mod tracklets;
pub mod video;

pub use error::{Error, Result};
