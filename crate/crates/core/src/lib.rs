//! Security analysis framework for EVM smart contracts.
//!
//! The crate decodes deployed bytecode, builds control-flow graphs, runs a
//! set of built-in vulnerability detectors, drives containerised external
//! analysis tools, and persists contracts plus scan reports in an append-only
//! store with aggregate statistics and change monitoring on top.

pub mod adapters;
pub mod cfg;
pub mod config;
pub mod detectors;
pub mod disasm;
pub mod engine;
pub mod ingest;
pub mod model;
pub mod pragma;
pub mod stats;
pub mod store;
