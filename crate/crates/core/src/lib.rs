//! Directed greybox fuzzing of syscall sequences against a simulated kernel.

pub mod cli;
pub mod config;
pub mod distance;
pub mod engine;
pub mod graph;
pub mod inference;
pub mod input;
pub mod scheduler;
pub mod sim;
pub mod stats;
