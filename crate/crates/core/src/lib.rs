//! Remove linguistic properties from layerwise language-model
//! representations and measure what the removal does to probing accuracy
//! and to voxelwise fMRI encoding performance.

pub mod annotation;
pub mod data;
pub mod encoding;
pub mod error;
pub mod probing;
pub mod removal;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
