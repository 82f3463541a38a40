//! Command-line surface of the tree-gated sparse MLP: configuration, model
//! files, metrics reports and analysis exports.

pub mod analysis;
pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
