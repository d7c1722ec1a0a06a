//! Multi-echelon supply-chain simulation with a hybrid liquid-network /
//! boosted-tree demand forecaster and a profit-lookahead ordering policy.
//!
//! The crate is organised bottom-up:
//!
//! - [`demand`]: consumer demand generation and robustness noise
//! - [`chain`]: the four-layer inventory state machine and profit ledger
//! - [`features`]: per-layer feature vectors, min-max scaling, sliding windows
//! - [`lnn`]: liquid time-constant cell with backpropagation through time
//! - [`gbt`]: gradient-boosted regression trees
//! - [`forecast`]: hybrid, boosted-tree and moving-average forecasters
//! - [`policy`]: safety stock, candidate enumeration and profit lookahead
//! - [`engine`]: training/validation phases, multi-seed experiments, tuning
//! - [`eval`]: metrics, composite scoring, statistical tests, reports
//! - [`cli`]: command-line front end

pub mod chain;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod demand;
pub mod engine;
pub mod error;
pub mod eval;
pub mod features;
pub mod forecast;
pub mod gbt;
pub mod lnn;
pub mod policy;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
