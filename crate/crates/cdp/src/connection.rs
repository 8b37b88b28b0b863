//! WebSocket message layer: id-correlated commands and an event stream.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot};
use tokio_tungstenite::tungstenite::Message;

use crate::CdpError;

type Pending = Arc<Mutex<HashMap<u64, (String, oneshot::Sender<Result<Value, CdpError>>)>>>;

/// A protocol event.
#[derive(Clone, Debug, PartialEq)]
pub struct CdpEvent {
    pub method: String,
    pub params: Value,
}

#[derive(Deserialize)]
struct Incoming {
    id: Option<u64>,
    method: Option<String>,
    #[serde(default)]
    params: Value,
    result: Option<Value>,
    error: Option<RemoteError>,
}

#[derive(Deserialize)]
struct RemoteError {
    code: i64,
    message: String,
}

/// One WebSocket connection. Commands may be issued concurrently; each
/// response is routed to the command with the same id.
pub struct CdpConnection {
    outgoing: mpsc::UnboundedSender<Message>,
    pending: Pending,
    closed: Arc<AtomicBool>,
    next_id: AtomicU64,
    events: Option<mpsc::UnboundedReceiver<CdpEvent>>,
    command_timeout: Duration,
}

impl CdpConnection {
    pub async fn connect(endpoint: &str, connect_timeout: Duration) -> Result<Self, CdpError> {
        let attempt = tokio_tungstenite::connect_async(endpoint);
        let (ws, _) = tokio::time::timeout(connect_timeout, attempt)
            .await
            .map_err(|_| CdpError::ConnectTimeout {
                endpoint: endpoint.to_string(),
                after: connect_timeout,
            })?
            .map_err(|e| CdpError::Connect {
                endpoint: endpoint.to_string(),
                reason: e.to_string(),
            })?;
        let (mut sink, mut stream) = ws.split();
        let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Message>();
        let (ev_tx, ev_rx) = mpsc::unbounded_channel();
        let pending: Pending = Arc::new(Mutex::new(HashMap::new()));

        tokio::spawn(async move {
            while let Some(msg) = out_rx.recv().await {
                if sink.send(msg).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        });

        let closed = Arc::new(AtomicBool::new(false));
        let reader_closed = closed.clone();
        let reader_pending = pending.clone();
        tokio::spawn(async move {
            while let Some(msg) = stream.next().await {
                let text = match msg {
                    Ok(Message::Text(t)) => t.to_string(),
                    Ok(Message::Binary(b)) => String::from_utf8_lossy(&b).into_owned(),
                    Ok(Message::Close(_)) | Err(_) => break,
                    Ok(_) => continue,
                };
                let incoming: Incoming = match serde_json::from_str(&text) {
                    Ok(m) => m,
                    Err(e) => {
                        log::warn!("ignoring undecodable message: {e}");
                        continue;
                    }
                };
                if let Some(id) = incoming.id {
                    let entry = reader_pending.lock().unwrap().remove(&id);
                    let Some((method, reply)) = entry else {
                        log::warn!("response to unknown command id {id}");
                        continue;
                    };
                    let outcome = match (incoming.result, incoming.error) {
                        (_, Some(e)) => Err(CdpError::Protocol {
                            method,
                            code: e.code,
                            message: e.message,
                        }),
                        (result, None) => Ok(result.unwrap_or(Value::Null)),
                    };
                    let _ = reply.send(outcome);
                } else if let Some(method) = incoming.method {
                    let _ = ev_tx.send(CdpEvent {
                        method,
                        params: incoming.params,
                    });
                }
            }
            reader_closed.store(true, Ordering::SeqCst);
            for (_, (_, reply)) in reader_pending.lock().unwrap().drain() {
                let _ = reply.send(Err(CdpError::Closed));
            }
        });

        Ok(CdpConnection {
            outgoing: out_tx,
            pending,
            closed,
            next_id: AtomicU64::new(1),
            events: Some(ev_rx),
            command_timeout: Duration::from_secs(30),
        })
    }

    pub fn set_command_timeout(&mut self, timeout: Duration) {
        self.command_timeout = timeout;
    }

    /// The event stream; can be taken once.
    pub fn take_events(&mut self) -> Option<mpsc::UnboundedReceiver<CdpEvent>> {
        self.events.take()
    }

    /// Sends a command and waits for its result.
    pub async fn call(&self, method: &str, params: Value) -> Result<Value, CdpError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = oneshot::channel();
        self.pending
            .lock()
            .unwrap()
            .insert(id, (method.to_string(), tx));
        if self.closed.load(Ordering::SeqCst) {
            self.pending.lock().unwrap().remove(&id);
            return Err(CdpError::Closed);
        }
        let text = json!({ "id": id, "method": method, "params": params }).to_string();
        if self.outgoing.send(Message::Text(text.into())).is_err() {
            self.pending.lock().unwrap().remove(&id);
            return Err(CdpError::Closed);
        }
        match tokio::time::timeout(self.command_timeout, rx).await {
            Ok(Ok(outcome)) => outcome,
            Ok(Err(_)) => Err(CdpError::Closed),
            Err(_) => {
                self.pending.lock().unwrap().remove(&id);
                Err(CdpError::Timeout {
                    method: method.to_string(),
                })
            }
        }
    }
}

impl Drop for CdpConnection {
    fn drop(&mut self) {
        let _ = self.outgoing.send(Message::Close(None));
    }
}
