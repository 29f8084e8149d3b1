//! Operator surface for the memory engine: configuration resolution, the
//! `gam` command implementations and the HTTP service.

pub mod commands;
pub mod config;
pub mod service;

pub use config::{BackendConfig, ConfigLayer, EngineConfig};
