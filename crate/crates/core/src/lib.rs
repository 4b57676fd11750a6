//! Weakly supervised few-shot semantic segmentation.
//!
//! Pseudo-masks are built by fusing class activation maps with weights taken
//! from a class-name embedding table and gating them with a saliency map. A
//! pixel-level prototypical encoder is meta-trained on episodes of those
//! masks, and novel-class queries are segmented by k-nearest-neighbour search
//! against encoded support pixels.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod episode;
pub mod error;
pub mod eval;
pub mod inference;
pub mod meta_learner;
pub mod metric;
pub mod pseudo_label;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
