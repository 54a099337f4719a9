pub mod embedding;
pub mod error;
pub mod image;
pub mod prompt;
pub mod providers;
pub mod scoring;
pub mod selection;
pub mod template;
pub mod promptgen;
pub mod optimizer;
pub mod store;
pub mod editing;
pub mod evaluation;
pub mod config;
