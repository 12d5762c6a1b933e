//! Sentence-level hyperbole and metaphor detection with single-task and
//! multi-task transformer classifiers, small enough to train on a CPU.

pub mod agreement;
pub mod attnprobe;
pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evalharness;
pub mod model;
pub mod objectives;

pub use error::{Error, ErrorClass, Result};
