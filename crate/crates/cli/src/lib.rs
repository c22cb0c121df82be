//! Library surface of the CLI harness, shared by the `refine` binary and
//! the acceptance suite.

pub mod commands;
pub mod config;
pub mod plot;
