//! Command-line and HTTP front end for the `medrag` engine.

pub mod cli;
pub mod commands;
pub mod components;
pub mod config;
pub mod server;
