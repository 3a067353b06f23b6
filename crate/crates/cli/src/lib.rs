//! Pipeline orchestration for the `acciturn` binary: command-line surface,
//! file I/O, and the synthetic two-stage demonstration.

pub mod args;
pub mod commands;
pub mod io;
pub mod pipeline;
