//! HTTP front end for hdb.
//!
//! [`App`] turns requests into catalog-driven pages; [`http`] carries them
//! over HTTP/1.1, either on a listening socket or as a single exchange on
//! standard input and output.

pub mod app;
pub mod config;
pub mod diagnostics;
pub mod http;
pub mod pages;
pub mod site;
pub mod uploads;

pub use app::{App, Request, Response, StartError};
pub use config::{ConfigError, ServerConfig};
