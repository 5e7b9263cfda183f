//! Generative zero-shot learning with a semantic-reconstruction regularizer.

pub mod cli;
pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod hallucinate;
pub mod losses;
pub mod networks;
pub mod trainer;
pub mod zsleval;

pub use error::{Error, Result};
