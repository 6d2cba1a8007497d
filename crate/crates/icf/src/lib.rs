//! Identifier cache function: ingests association events, keeps them in keyword-hashed
//! hyper-rectangles and answers encrypted queries over a length-prefixed TCP protocol.

pub mod client;
pub mod config;
mod error;
pub mod metrics;
mod server;
mod service;
pub mod wire;

pub use client::IcfClient;
pub use config::{ServerConfig, Strategy};
pub use error::{IcfError, Result};
pub use metrics::{MetricsLog, Stats};
pub use server::{serve, ServerHandle};
pub use service::Icf;
