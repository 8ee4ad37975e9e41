//! Command-line front end: configuration loading and the commands that
//! drive the engine end to end.

pub mod commands;
pub mod config;
