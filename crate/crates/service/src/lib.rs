//! HTTP service and command-line front end for the labeling engine.

pub mod api;
pub mod cli;
pub mod error;
pub mod render;
pub mod session;
