//! File formats, persistence, pipelines and the HTTP service around
//! `ringwatch-core`.

pub mod artifact;
pub mod document;
pub mod error;
pub mod model_file;
pub mod pipeline;
pub mod replay;
pub mod report;
pub mod service;
pub mod store;

pub use error::{Error, Result};
