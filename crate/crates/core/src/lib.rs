//! Character-to-word-to-character (C2W2C) compositional language model.
//!
//! Words are read as character sequences by a bidirectional LSTM encoder
//! ([`model::c2w`]), a two-layer word-level LSTM ([`model::lm`]) summarises
//! the context, and a gated recurrent decoder with a maxout readout
//! ([`model::w2c`]) spells the next word one character at a time. A
//! conventional word-level LSTM ([`model::wordlstm`]) is included as the
//! comparison baseline.

pub mod error;
pub mod numkernel;
pub mod corpus;
pub mod model;
pub mod checkpoint;
pub mod training;
pub mod inference;
pub mod cli;

pub use error::{Error, Result};
