//! Command-line verbs and the local HTTP API over `fleetlens-core`.

pub mod bench;
pub mod config;
pub mod filter;
pub mod server;
