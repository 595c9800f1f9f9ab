//! Persona exploration and exploitation for persona-grounded dialogue
//! generation.
//!
//! The pipeline expands each speaker's persona description with topically
//! related words mined by a variational topic model, stores persona
//! sentences, persona words and expanded words in key-value memories, and
//! decodes responses with a GRU decoder that reads those memories through
//! chained multi-hop retrieval.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod expansion;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod net;
pub mod numkit;
pub mod pipeline;
pub mod topic;
pub mod train;

pub use error::{Error, Result};
