pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod jsonl;
pub mod model;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
