//! The crawler's view of a live page.

use std::time::Duration;

use tokio::runtime::Runtime;

use stylecrawl_core::engine::coverage::CoverageMap;
use stylecrawl_core::engine::{Backend, BackendError, EventPayload};
use stylecrawl_core::model::{DomSnapshot, ElementId, EventType};

use crate::payload::PageSnapshot;
use crate::session::{BrowserSession, SessionConfig};
use crate::CdpError;

/// Crawls from `start_url`; a reset navigates back to it.
pub struct LiveBackend {
    runtime: Runtime,
    session: BrowserSession,
    start_url: String,
    /// Page indices of the elements of the last snapshot handed out.
    page_index: Vec<usize>,
}

impl LiveBackend {
    pub fn connect(endpoint: &str, start_url: &str, config: SessionConfig) -> Result<Self, CdpError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(1)
            .enable_all()
            .build()
            .map_err(|e| CdpError::Connect {
                endpoint: endpoint.to_string(),
                reason: e.to_string(),
            })?;
        let session = runtime.block_on(BrowserSession::connect(endpoint, config))?;
        Ok(LiveBackend {
            runtime,
            session,
            start_url: start_url.to_string(),
            page_index: Vec::new(),
        })
    }

    pub fn session(&mut self) -> &mut BrowserSession {
        &mut self.session
    }

    /// Runs a session operation to completion.
    pub fn block_on<F: std::future::Future>(&self, f: F) -> F::Output {
        self.runtime.block_on(f)
    }

    fn accept(&mut self, page: PageSnapshot) -> DomSnapshot {
        self.page_index = page.page_index;
        page.snapshot
    }
}

fn failure(e: CdpError) -> BackendError {
    BackendError::Failure(e.to_string())
}

impl Backend for LiveBackend {
    fn load_initial(&mut self) -> Result<DomSnapshot, BackendError> {
        let page = self
            .runtime
            .block_on(self.session.navigate(&self.start_url))
            .map_err(failure)?;
        Ok(self.accept(page))
    }

    fn fire(
        &mut self,
        element: ElementId,
        event: EventType,
        payload: &EventPayload,
    ) -> Result<DomSnapshot, BackendError> {
        let page_index = *self.page_index.get(element).ok_or(BackendError::Stale(element))?;
        match self
            .runtime
            .block_on(self.session.dispatch(page_index, event, payload))
        {
            Ok(page) => Ok(self.accept(page)),
            Err(CdpError::Stale(_)) => Err(BackendError::Stale(element)),
            Err(e) => Err(failure(e)),
        }
    }

    fn coverage(&mut self) -> Result<CoverageMap, BackendError> {
        self.runtime
            .block_on(self.session.take_coverage())
            .map_err(failure)
    }

    fn elapsed(&self) -> Duration {
        self.session.elapsed()
    }
}
