//! Storage, remote backends, HTTP service and offline evaluation around
//! [`caproute_core`].

pub mod config;
pub mod harness;
pub mod remote;
pub mod service;
pub mod store;

pub use config::{ConfigError, ServiceConfig};
pub use store::{load_store, save_store, LogStore, StoreError};
