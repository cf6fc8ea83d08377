//! Context-aware few-shot classification: prototypical networks with
//! class-conditioned context attention, gated visuo-semantic fusion and
//! word-embedding prototype refinement, plus synthetic scene corpora on
//! which the value of context can be controlled.

pub mod checkpoint;
pub mod config;
pub mod context;
pub mod embeddings;
pub mod episodic;
pub mod error;
pub mod fusion;
pub mod numerics;
pub mod synthcorpus;

pub use error::{Error, Result};
