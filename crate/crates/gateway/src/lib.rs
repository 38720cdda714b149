//! Configuration, command-line interface, remote model providers and the
//! HTTP service around the cordchat engine.

pub mod app;
pub mod cli;
pub mod config;
pub mod error;
pub mod providers;
pub mod server;

pub use error::GatewayError;
