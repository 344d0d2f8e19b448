//! Experiment harness for the sncg optimizers: TOML-configured run matrices,
//! JSONL iteration traces, CSV summaries, and trace re-verification.

pub mod config;
pub mod runner;
pub mod summary;
pub mod trace;
pub mod verify_cmd;
