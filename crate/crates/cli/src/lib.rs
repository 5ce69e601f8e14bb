//! Corpus ingestion, experiment grids, baselines and benchmarks built on the
//! `latticegen` protocol crate.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod bench;
pub mod config;
pub mod corpus;
pub mod experiment;
pub mod fixture;
pub mod models;
