//! Channels and command-line front end for the dialogforge engine.

pub mod app;
pub mod config;
pub mod lanes;
pub mod messenger;
pub mod server;
