//! CLI and HTTP front ends over one model snapshot.

pub mod cli;
pub mod config;
pub mod http;

pub use cli::dispatch;
pub use config::{ServiceConfig, CONFIG_ENV};
pub use http::{router, serve, ApiSession};
