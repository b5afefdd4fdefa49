//! Command-line front end for the gradlens experiments.
//!
//! The library half holds everything the binary does apart from argument
//! parsing — run configuration ([`config`]), artifact writing
//! ([`artifacts`]), and the experiment registry ([`experiments`]) — so
//! integration tests can drive full runs in-process.

pub mod artifacts;
pub mod config;
pub mod experiments;
