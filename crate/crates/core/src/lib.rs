//! Structured-prediction NER: attention-pooled encoding, span classification
//! with focal loss, linear-chain CRF tagging, and self-training.

pub mod autodiff;
pub mod checks;
pub mod container;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod pipeline;
pub mod rng;
pub mod span_head;
pub mod synth;

pub use error::{Error, Result};
