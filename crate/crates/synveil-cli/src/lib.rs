//! Command implementations and report plumbing behind the `synveil` binary.
//!
//! Exposed as a library so integration tests can parse record files and
//! re-render tables with the exact code the binary uses.

pub mod config;
pub mod ops;
pub mod report;
