//! Scheduled multi-task learning for context-aware chat translation.
//!
//! The crate is organised bottom-up: [`diffcore`] provides tensors and
//! reverse-mode gradients, [`model`] the context-aware encoder-decoder and
//! its task losses, [`scheduler`] the gradient-projection task scheduler,
//! [`trainer`] the three-stage training driver, and [`eval`] decoding and
//! metrics. [`corpus`] handles data preparation.

pub mod corpus;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod kv;
pub mod model;
pub mod scheduler;
pub mod task;
pub mod trainer;

pub use error::{Error, Result};
