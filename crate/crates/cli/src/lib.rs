//! The `pws` command line and the labeling-console HTTP service.

pub mod commands;
pub mod service;
