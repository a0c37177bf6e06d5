//! HTTP service and command-line front end over the estimation engine.

pub mod api;
pub mod cli;
pub mod config;
pub mod engine;

pub use api::{router, AppState};
pub use config::Config;
pub use engine::Engine;
