//! Client side of the identifier cache: turns captured identifiers into private queries
//! and decrypts the associations the server returns.

mod batch;
mod capture;
mod client;
mod error;
mod keystore;

pub use batch::{batch_resolve, BatchReport, BatchRow, Status};
pub use capture::{read_captures, Capture};
pub use client::{LeaClient, Resolution};
pub use error::{LeaError, Result};
pub use keystore::{KeyStore, Session};
