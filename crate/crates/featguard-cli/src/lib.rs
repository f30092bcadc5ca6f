//! Library surface of the experiment driver, split out so the config parser
//! and pipeline are reachable from integration tests and fuzz targets.

pub mod commands;
pub mod config;
pub mod pipeline;
