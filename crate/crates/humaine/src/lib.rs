//! Files, reports, the HTTP service and the command line around
//! [`humaine_core`].

pub mod error;
pub mod formats;
pub mod llm;
pub mod report;
pub mod runner;
pub mod service;
pub mod store;

pub use error::{Error, Result};
