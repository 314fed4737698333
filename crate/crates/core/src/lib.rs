pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod negatives;
pub mod ontology;
pub mod otalign;
pub mod primary;
pub mod prompts;
pub mod seed;
pub mod synth;
pub mod training;
pub mod types;

pub use error::{Error, Result};
