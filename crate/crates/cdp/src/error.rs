use std::time::Duration;

use thiserror::Error;

use crate::payload::PayloadError;

#[derive(Debug, Error)]
pub enum CdpError {
    #[error("no connection to {endpoint} within {after:?}")]
    ConnectTimeout { endpoint: String, after: Duration },
    #[error("cannot connect to {endpoint}: {reason}")]
    Connect { endpoint: String, reason: String },
    #[error("{method} failed with code {code}: {message}")]
    Protocol {
        method: String,
        code: i64,
        message: String,
    },
    #[error("{method} timed out")]
    Timeout { method: String },
    #[error("connection closed")]
    Closed,
    #[error("navigation to {url} failed: {reason}")]
    Navigation { url: String, reason: String },
    #[error("instrumentation script failed: {0}")]
    Injection(String),
    #[error("invalid extraction payload: {0}")]
    Payload(#[from] PayloadError),
    #[error("unexpected reply to {method}: {detail}")]
    Decode { method: String, detail: String },
    #[error("element at page index {0} is gone")]
    Stale(usize),
}
