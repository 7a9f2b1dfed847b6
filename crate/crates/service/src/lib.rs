//! CLI and HTTP front end over `booktree-core`.

pub mod api;
pub mod app;
pub mod config;
pub mod jobs;

pub use api::router;
pub use app::{App, AppError, AppResult, ErrorCode};
pub use config::{Config, ConfigError};
