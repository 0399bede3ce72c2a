//! Command-line front end for locokit: the `simulate`, `visualize`, `demo`
//! and `check` commands, the run manifest and the visualizer server.

pub mod check;
pub mod cli;
pub mod demo;
pub mod inputs;
pub mod plan;
pub mod run;
pub mod viz;
