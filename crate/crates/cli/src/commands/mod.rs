//! Subcommands.

pub mod info;
pub mod recover;
pub mod theory;
pub mod train;
