//! Core of hdb, a schema-transparent web administration interface for
//! relational databases.
//!
//! Everything a page shows is derived from the catalog at request time. Site
//! behaviour is added through the hook registry and view definitions.

pub mod auth;
pub mod bridge;
pub mod catalog;
pub mod clock;
pub mod doctree;
pub mod hooks;
pub mod ops;
pub mod secret;
pub mod sqlgen;
pub mod value;
pub mod views;

pub use clock::{Clock, ManualClock, SystemClock, Timestamp};
pub use secret::Secret;
pub use value::Value;
