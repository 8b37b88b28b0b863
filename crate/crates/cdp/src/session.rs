//! One page driven over the DevTools protocol.

use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tokio::sync::mpsc;

use stylecrawl_core::engine::coverage::{merge_into, CoverageMap};
use stylecrawl_core::engine::graph::{hash_dom, StateId};
use stylecrawl_core::engine::EventPayload;
use stylecrawl_core::model::{DomSnapshot, ElementId, EventSet, EventType};

use crate::connection::{CdpConnection, CdpEvent};
use crate::coverage::{ScriptCoverage, ScriptRegistry, OWN_SCRIPT_PREFIX};
use crate::payload::{instrument_expression, payload_to_snapshot, BoxRecord, ExtractionPayload, PageSnapshot};
use crate::CdpError;

const OBJECT_GROUP: &str = "stylecrawl";

/// How long the DOM must stay unchanged before a page counts as settled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quiescence {
    pub window: Duration,
    pub poll: Duration,
    /// Give up waiting after this long and take the page as it is.
    pub max_wait: Duration,
}

impl Default for Quiescence {
    fn default() -> Self {
        Quiescence {
            window: Duration::from_millis(500),
            poll: Duration::from_millis(50),
            max_wait: Duration::from_secs(5),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub connect_timeout: Duration,
    pub command_timeout: Duration,
    pub load_timeout: Duration,
    pub quiescence: Quiescence,
    /// Site id written into snapshots.
    pub site_id: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            connect_timeout: Duration::from_secs(10),
            command_timeout: Duration::from_secs(30),
            load_timeout: Duration::from_secs(30),
            quiescence: Quiescence::default(),
            site_id: "live".to_string(),
        }
    }
}

/// Listeners harvested for a page.
#[derive(Clone, Debug)]
pub struct Harvest {
    pub snapshot: DomSnapshot,
    /// Elements whose listener query failed.
    pub unknown: Vec<ElementId>,
}

pub struct BrowserSession {
    endpoint: String,
    target_id: Option<String>,
    conn: CdpConnection,
    events: mpsc::UnboundedReceiver<CdpEvent>,
    scripts: ScriptRegistry,
    coverage: CoverageMap,
    config: SessionConfig,
    started: Instant,
    snapshots_taken: usize,
}

impl BrowserSession {
    /// Connects to a page target's WebSocket endpoint and starts coverage
    /// collection.
    pub async fn connect(endpoint: &str, config: SessionConfig) -> Result<Self, CdpError> {
        let mut conn = CdpConnection::connect(endpoint, config.connect_timeout).await?;
        conn.set_command_timeout(config.command_timeout);
        let events = conn.take_events().expect("fresh connection");
        let target_id = endpoint
            .rsplit('/')
            .next()
            .filter(|s| !s.is_empty() && !s.contains(':'))
            .map(str::to_string);
        let session = BrowserSession {
            endpoint: endpoint.to_string(),
            target_id,
            conn,
            events,
            scripts: ScriptRegistry::default(),
            coverage: CoverageMap::new(),
            config,
            started: Instant::now(),
            snapshots_taken: 0,
        };
        for domain in ["Page", "Runtime", "DOM", "Debugger", "Profiler"] {
            session.conn.call(&format!("{domain}.enable"), json!({})).await?;
        }
        session
            .conn
            .call(
                "Profiler.startPreciseCoverage",
                json!({ "callCount": true, "detailed": true }),
            )
            .await?;
        Ok(session)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn target_id(&self) -> Option<&str> {
        self.target_id.as_deref()
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    /// Loads `url`, waits for it to settle and extracts it.
    pub async fn navigate(&mut self, url: &str) -> Result<PageSnapshot, CdpError> {
        // Coverage of the page being left is lost once it unloads.
        self.take_coverage().await?;
        self.drain_events();
        let reply = self
            .conn
            .call("Page.navigate", json!({ "url": url }))
            .await
            .map_err(|e| match e {
                CdpError::Protocol { message, .. } => CdpError::Navigation {
                    url: url.to_string(),
                    reason: message,
                },
                other => other,
            })?;
        if let Some(reason) = reply.get("errorText").and_then(Value::as_str) {
            if !reason.is_empty() {
                return Err(CdpError::Navigation {
                    url: url.to_string(),
                    reason: reason.to_string(),
                });
            }
        }
        if !self
            .wait_for_event("Page.loadEventFired", self.config.load_timeout)
            .await?
        {
            return Err(CdpError::Navigation {
                url: url.to_string(),
                reason: "no load event".to_string(),
            });
        }
        self.settle().await;
        self.extract().await
    }

    /// Reads the current page without changing it.
    pub async fn extract(&mut self) -> Result<PageSnapshot, CdpError> {
        let value = self.evaluate("extract", None, true).await?;
        let payload: ExtractionPayload = serde_json::from_value(value["value"].clone())
            .map_err(|e| CdpError::Injection(format!("payload does not decode: {e}")))?;
        let dom = self.serialized_dom().await?;
        self.snapshots_taken += 1;
        let id = format!("page-{}", self.snapshots_taken);
        Ok(payload_to_snapshot(&payload, &id, &self.config.site_id, dom)?)
    }

    pub async fn serialized_dom(&mut self) -> Result<String, CdpError> {
        let value = self.evaluate("dom", None, true).await?;
        value["value"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| CdpError::Injection("document has no markup".to_string()))
    }

    pub async fn dom_hash(&mut self) -> Result<StateId, CdpError> {
        Ok(hash_dom(&self.serialized_dom().await?))
    }

    /// Fires `event` at the center of the element at `page_index` and
    /// returns the settled page.
    pub async fn dispatch(
        &mut self,
        page_index: usize,
        event: EventType,
        payload: &EventPayload,
    ) -> Result<PageSnapshot, CdpError> {
        let located = self.evaluate("locate", Some(page_index), true).await?;
        let value = &located["value"];
        if value.is_null() {
            return Err(CdpError::Stale(page_index));
        }
        let bbox: BoxRecord = serde_json::from_value(value.clone()).map_err(|e| CdpError::Decode {
            method: "Runtime.evaluate".to_string(),
            detail: e.to_string(),
        })?;
        let (x, y) = (bbox.x + bbox.w / 2.0, bbox.y + bbox.h / 2.0);
        let away = away_from(&bbox);
        match event {
            EventType::Click => {
                self.mouse("mouseMoved", x, y, None).await?;
                self.mouse("mousePressed", x, y, Some(0)).await?;
                self.mouse("mouseReleased", x, y, Some(0)).await?;
            }
            EventType::Mouseover => {
                self.mouse("mouseMoved", away.0, away.1, None).await?;
                self.mouse("mouseMoved", x, y, None).await?;
            }
            EventType::Mouseout => {
                self.mouse("mouseMoved", x, y, None).await?;
                self.mouse("mouseMoved", away.0, away.1, None).await?;
            }
            EventType::Mousedown => {
                let button = payload.button.unwrap_or(0);
                self.mouse("mouseMoved", x, y, None).await?;
                self.mouse("mousePressed", x, y, Some(button)).await?;
                // Released elsewhere so no click lands on the element.
                self.mouse("mouseMoved", away.0, away.1, None).await?;
                self.mouse("mouseReleased", away.0, away.1, Some(button)).await?;
            }
            EventType::Touchstart => {
                self.conn
                    .call(
                        "Input.dispatchTouchEvent",
                        json!({ "type": "touchStart", "touchPoints": [{ "x": x, "y": y }] }),
                    )
                    .await?;
                self.conn
                    .call(
                        "Input.dispatchTouchEvent",
                        json!({ "type": "touchEnd", "touchPoints": [] }),
                    )
                    .await?;
            }
        }
        self.settle().await;
        self.extract().await
    }

    /// Fills `direct_listeners` from the debugger's listener query.
    pub async fn harvest_listeners(&mut self, page: &PageSnapshot) -> Result<Harvest, CdpError> {
        let nodes = self.evaluate("nodes", None, false).await?;
        let array_id = nodes["objectId"]
            .as_str()
            .ok_or_else(|| CdpError::Injection("element list is not an object".to_string()))?
            .to_string();
        let mut snapshot = page.snapshot.clone();
        let mut unknown = Vec::new();
        for (id, &page_index) in page.page_index.iter().enumerate() {
            match self.listeners_at(&array_id, page_index).await {
                Ok(set) => snapshot.elements[id].direct_listeners = set,
                Err(e) => {
                    log::warn!("listener query failed for element {page_index}: {e}");
                    snapshot.elements[id].direct_listeners.clear();
                    unknown.push(id);
                }
            }
        }
        let _ = self
            .conn
            .call("Runtime.releaseObjectGroup", json!({ "objectGroup": OBJECT_GROUP }))
            .await;
        Ok(Harvest { snapshot, unknown })
    }

    async fn listeners_at(&mut self, array_id: &str, page_index: usize) -> Result<EventSet, CdpError> {
        let element = self
            .conn
            .call(
                "Runtime.callFunctionOn",
                json!({
                    "objectId": array_id,
                    "functionDeclaration": format!("function (i) {{ return this[i]; }}\n//# sourceURL={OWN_SCRIPT_PREFIX}harvest"),
                    "arguments": [{ "value": page_index }],
                    "objectGroup": OBJECT_GROUP,
                }),
            )
            .await?;
        let object_id = element["result"]["objectId"]
            .as_str()
            .ok_or(CdpError::Stale(page_index))?;
        let reply = self
            .conn
            .call(
                "DOMDebugger.getEventListeners",
                json!({ "objectId": object_id }),
            )
            .await?;
        let listeners = reply["listeners"].as_array().ok_or_else(|| CdpError::Decode {
            method: "DOMDebugger.getEventListeners".to_string(),
            detail: "no listener array".to_string(),
        })?;
        Ok(listeners
            .iter()
            .filter_map(|l| l["type"].as_str())
            .filter_map(|t| t.parse().ok())
            .collect())
    }

    /// Cumulative covered ranges of the session.
    pub async fn take_coverage(&mut self) -> Result<CoverageMap, CdpError> {
        let reply = self.conn.call("Profiler.takePreciseCoverage", json!({})).await?;
        self.drain_events();
        let report: Vec<ScriptCoverage> =
            serde_json::from_value(reply["result"].clone()).map_err(|e| CdpError::Decode {
                method: "Profiler.takePreciseCoverage".to_string(),
                detail: e.to_string(),
            })?;
        let sample = self.scripts.resolve(&report);
        merge_into(&mut self.coverage, &sample);
        Ok(self.coverage.clone())
    }

    async fn evaluate(&mut self, mode: &str, arg: Option<usize>, by_value: bool) -> Result<Value, CdpError> {
        let expression = format!(
            "{}\n//# sourceURL={OWN_SCRIPT_PREFIX}instrument",
            instrument_expression(mode, arg)
        );
        let reply = self
            .conn
            .call(
                "Runtime.evaluate",
                json!({
                    "expression": expression,
                    "returnByValue": by_value,
                    "objectGroup": OBJECT_GROUP,
                }),
            )
            .await
            .map_err(|e| match e {
                CdpError::Protocol { message, .. } => CdpError::Injection(message),
                other => other,
            })?;
        if let Some(details) = reply.get("exceptionDetails") {
            let text = details["exception"]["description"]
                .as_str()
                .or_else(|| details["text"].as_str())
                .unwrap_or("exception");
            return Err(CdpError::Injection(text.to_string()));
        }
        Ok(reply["result"].clone())
    }

    async fn mouse(&self, kind: &str, x: f64, y: f64, button: Option<u8>) -> Result<(), CdpError> {
        let mut params = json!({ "type": kind, "x": x, "y": y });
        if let Some(b) = button {
            let (name, mask) = match b {
                1 => ("middle", 4),
                2 => ("right", 2),
                _ => ("left", 1),
            };
            params["button"] = json!(name);
            params["buttons"] = json!(if kind == "mouseReleased" { 0 } else { mask });
            params["clickCount"] = json!(1);
        }
        self.conn.call("Input.dispatchMouseEvent", params).await?;
        Ok(())
    }

    /// Polls the DOM until it has not changed for the quiescence window.
    async fn settle(&mut self) {
        let q = self.config.quiescence;
        if q.window.is_zero() {
            self.drain_events();
            return;
        }
        let start = Instant::now();
        let mut last = self.dom_hash().await.ok();
        let mut stable_since = Instant::now();
        loop {
            tokio::time::sleep(q.poll).await;
            self.drain_events();
            let now = self.dom_hash().await.ok();
            if now.is_some() && now == last {
                if stable_since.elapsed() >= q.window {
                    return;
                }
            } else {
                last = now;
                stable_since = Instant::now();
            }
            if start.elapsed() >= q.max_wait {
                log::debug!("page still changing after {:?}", q.max_wait);
                return;
            }
        }
    }

    fn handle_event(&mut self, event: &CdpEvent) {
        if event.method == "Debugger.scriptParsed" {
            let p = &event.params;
            if let Some(id) = p["scriptId"].as_str() {
                self.scripts.script_parsed(
                    id,
                    p["url"].as_str().unwrap_or(""),
                    p["hash"].as_str().unwrap_or(""),
                );
            }
        }
    }

    fn drain_events(&mut self) {
        while let Ok(event) = self.events.try_recv() {
            self.handle_event(&event);
        }
    }

    /// Waits for an event named `method`; `false` on timeout.
    async fn wait_for_event(&mut self, method: &str, timeout: Duration) -> Result<bool, CdpError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            match tokio::time::timeout_at(deadline, self.events.recv()).await {
                Err(_) => return Ok(false),
                Ok(None) => return Err(CdpError::Closed),
                Ok(Some(event)) => {
                    self.handle_event(&event);
                    if event.method == method {
                        return Ok(true);
                    }
                }
            }
        }
    }
}

/// A point outside `b`, for moving the pointer off an element.
fn away_from(b: &BoxRecord) -> (f64, f64) {
    let inside = |x: f64, y: f64| x >= b.x && x <= b.x + b.w && y >= b.y && y <= b.y + b.h;
    if !inside(1.0, 1.0) {
        (1.0, 1.0)
    } else {
        (b.x + b.w + 1.0, b.y + b.h + 1.0)
    }
}
