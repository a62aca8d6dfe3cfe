//! Generative psychometrics for value measurement of language models: value
//! lexicon construction, non-reactive measurement, value-system structure,
//! confirmatory and circular validation, safety probing and alignment targets.

pub mod alignment;
mod atomic;
pub mod cfa;
pub mod circumplex;
pub mod corpus;
pub mod error;
pub mod gateway;
pub mod lexicon;
pub mod measurement;
pub mod optim;
pub mod pipeline;
pub mod probe;
pub mod psychometrics;
pub mod report;
pub mod stats;
pub mod synth;
pub mod text;

pub use error::{Error, ErrorKind, Result};
