//! Command-line pipeline and live demo server for the shepherding simulator.

pub mod config;
pub mod pipeline;
pub mod protocol;
pub mod server;
