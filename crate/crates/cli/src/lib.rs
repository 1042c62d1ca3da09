//! Library side of the `robustfit` command-line tool.

pub mod benchmark;
pub mod commands;
pub mod report;
pub mod settings;

/// Version accepted in config and suite files.
pub const SUPPORTED_VERSION: u32 = 1;
