//! Command-line front end: run configuration, the model file format and the
//! `fit`, `evaluate`, `explain` and `simulate` commands.

pub mod commands;
pub mod config;
pub mod encoding;
pub mod model_file;

pub use config::RunConfig;
pub use model_file::ModelBundle;
