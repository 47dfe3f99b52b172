pub mod composition;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use model::{Gpst, ModelConfig};
