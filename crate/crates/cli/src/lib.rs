//! Library side of the `gnnflow` command-line tool: command implementations
//! and the built-in invariant verification suite.

pub mod commands;
pub mod verify;
