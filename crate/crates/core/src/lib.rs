//! Two-stage fine-grained multi-label identification of clinical notes.
//!
//! Free-text notes are first structuralized: a configurable rule table
//! normalizes the text and a field schema of regular expressions pulls
//! lab-test numbers out into a fixed-width vector, leaving residual text.
//! A two-stream network then reads the residual text (as token embeddings)
//! and the structured vector side by side, exchanging information through
//! infusion blocks and a cross-attentive fusion module before a small
//! classifier head scores the four disease labels.

pub mod embedding;
pub mod error;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod structuralizer;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
