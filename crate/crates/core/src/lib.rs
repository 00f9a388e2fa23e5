//! Conversational music recommendation for videos at desk scale.
//!
//! The pipeline fuses a pooled video vector with a candidate track and a
//! free-text user prompt into one query vector, trains it against a target
//! music encoder with a contrastive objective, and evaluates retrieval over
//! a two-turn dialogue protocol. Synthetic feature providers stand in for
//! pretrained encoders, and a small causal decoder produces a justification
//! sentence conditioned on the recommended track.

mod binio;
pub mod contrastive;
pub mod datasim;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod numerics;
pub mod reasoner;
pub mod retrieval;
pub mod rng;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
