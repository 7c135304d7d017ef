//! Library side of the `hdb-bidder` tool: configuration, output handling
//! and the subcommands.

pub mod commands;
pub mod config;
pub mod outputs;
