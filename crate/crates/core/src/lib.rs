//! Flexible verifiable secret sharing for relational data warehouses.
//!
//! Records are split into `n - t + 2` polynomial shares stored at simulated
//! cloud service providers (CSPs). Any `t` CSPs, helped by pseudo shares
//! derived from plaintext keys, reconstruct a value and check its inner
//! signature. Per-CSP additive signature trees localize tampering, and
//! aggregates are evaluated on shares without decrypting individual records.

pub mod config;
pub mod cost;
pub mod cube;
pub mod error;
pub mod field;
pub mod keys;
pub mod outer_sig;
pub mod query;
pub mod schema;
pub mod sharing;
pub mod store;
pub mod warehouse;

pub use error::{Error, ErrorClass, Result};
pub use field::{Fe, Polynomial, PrimeField, MERSENNE_61};
pub use keys::{Scheme, SystemConfig};
pub use schema::{Codec, ColumnType, TableSchema, Value};
