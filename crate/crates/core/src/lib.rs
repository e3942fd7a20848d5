//! Trace-based evaluation harness for autonomous tool-using agents on local
//! sandboxed tasks.
//!
//! The harness runs paired model conditions over a task catalog with fixed
//! tools, budgets, and seeds; records complete traces; scores deterministic
//! success, evidence grounding, and failure labels; and produces paired
//! statistical comparisons and blind audit packets.

pub mod backend;
pub mod catalog;
pub mod cli;
pub mod controller;
pub mod report;
pub mod runner;
pub mod sandbox;
pub mod scoring;
pub mod stats;
pub mod trace;
pub mod util;

pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");
