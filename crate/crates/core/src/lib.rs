//! Tracks the existence and location of participants through procedural
//! text. A symbolic front end extracts syntactic tuples, queries a semantic
//! lexicon, and assembles a participant-specific heterogeneous graph; a
//! small tape-based neural model learns participant representations over
//! that graph and predicts per-step state changes and location spans.

pub mod annotate;
pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod lexicon;
pub mod model;
pub mod pipeline;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use corpus::{AnnotatedParagraph, GoldGrid, LocationState, LocationValue, StateChange, Token};
pub use error::{Error, Result};
pub use graph::ParticipantGraph;
pub use lexicon::{Attribute, Lexicon, LexiconRule};
pub use model::{Model, ModelConfig, PredictionGrid};
pub use train::{Checkpoint, TrainConfig};
