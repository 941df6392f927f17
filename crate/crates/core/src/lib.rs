//! Simulation core for hierarchical decentralized training of a toy
//! code-generation model, with inference-time trueput analysis and a
//! parallel decoding simulator.

pub mod data;
pub mod error;
pub mod eval;
pub mod fed;
pub mod grammar;
pub mod hierarchy;
pub mod ledger;
pub mod merge;
pub mod model;
pub mod pardecode;
pub mod partition;
pub mod rng;
pub mod synth;
pub mod trueput;

pub use error::{Error, Result};
