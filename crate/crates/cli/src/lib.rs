pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod relu;
pub mod sdl;
pub mod stats;

pub use error::CliError;
