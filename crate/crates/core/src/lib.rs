//! Review-spam detection over review graphs, plus tooling for building
//! synthetic LLM-spam datasets.

pub mod autodiff;
pub mod checkpoint;
pub mod embed;
pub mod eval;
pub mod error;
pub mod fixture;
pub mod graph;
pub mod http;
pub mod model;
pub mod records;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
