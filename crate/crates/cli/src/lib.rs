//! Command-line front end for the tiltmpc simulator.

pub mod commands;
pub mod config;
