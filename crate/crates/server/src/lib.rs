//! Session service for shaderbreed: an HTTP API with a per-session event
//! stream, and the command implementations behind the `shaderbreed` CLI.

pub mod api;
pub mod cli;
pub mod config;
pub mod session;
