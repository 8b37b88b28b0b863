//! DevTools-protocol backend: page extraction through an injected script,
//! listener harvesting, synthesized input and precise script coverage.

pub mod backend;
pub mod connection;
pub mod coverage;
mod error;
pub mod payload;
pub mod server;
pub mod session;

pub use backend::LiveBackend;
pub use connection::{CdpConnection, CdpEvent};
pub use error::CdpError;
pub use payload::{ExtractionPayload, PageSnapshot};
pub use session::{BrowserSession, Harvest, Quiescence, SessionConfig};
