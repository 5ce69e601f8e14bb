//! Privacy-aware text generation over noised token lattices.
//!
//! The client samples its true token at each step and hides it among `N - 1`
//! noise tokens in a shuffled lattice column. The server extends the same
//! lattice and returns next-token distributions for every `G`-token tail, never
//! learning which path is real. The [`attacks`] module implements what a
//! curious server can do with the transcript it keeps, and [`metrics`]
//! measures how much of the true sequence those attacks recover.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod error;
pub mod lattice;
pub mod lm;
pub mod metrics;
pub mod noise;
pub mod protocol;
pub mod rng;
pub mod transcript;
pub mod vocab;

pub use error::{Error, ProtocolErrorCode, Result};
pub use lattice::{GGramTail, Lattice, TokenId};
pub use transcript::TranscriptRecord;
