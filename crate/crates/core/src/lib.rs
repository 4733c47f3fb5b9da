//! Semantic-guided masked image modeling: selection, model, training, curation.

pub mod config;
pub mod curation;
pub mod error;
pub mod hog;
pub mod imaging;
pub mod keyed;
pub mod model;
pub mod selection;
pub mod topk;
pub mod train;

pub use error::{Error, Result};
