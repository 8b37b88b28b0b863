//! A scripted stand-in for a browser page speaking the DevTools protocol.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

use stylecrawl_core::features::{css_initial_values, required_properties};

#[derive(Clone, Debug)]
pub struct FakeElement {
    pub parent: Option<usize>,
    pub tag: &'static str,
    pub href: Option<&'static str>,
    pub bbox: (f64, f64, f64, f64),
    pub listeners: Vec<&'static str>,
    pub styles: BTreeMap<String, String>,
    /// The listener query fails for this element.
    pub query_fails: bool,
}

pub fn el(parent: Option<usize>, tag: &'static str, bbox: (f64, f64, f64, f64)) -> FakeElement {
    FakeElement {
        parent,
        tag,
        href: None,
        bbox,
        listeners: vec![],
        styles: css_initial_values(),
        query_fails: false,
    }
}

#[derive(Clone, Debug)]
pub struct FakePage {
    pub url: String,
    pub elements: Vec<FakeElement>,
    pub text: String,
    /// Script parsed when the page loads: (url, hash, length).
    pub script: Option<(String, String, u64)>,
}

/// Page A links to page B; B has a button whose handler toggles a text.
pub fn page_a() -> FakePage {
    let mut anchor = el(Some(1), "a", (10.0, 50.0, 80.0, 20.0));
    anchor.href = Some("b.html");
    anchor.styles.insert("cursor".into(), "pointer".into());
    FakePage {
        url: "http://fake/a.html".into(),
        elements: vec![
            el(None, "html", (0.0, 0.0, 800.0, 600.0)),
            el(Some(0), "body", (8.0, 8.0, 784.0, 100.0)),
            el(Some(1), "p", (8.0, 8.0, 784.0, 20.0)),
            anchor,
        ],
        text: "Page A".into(),
        script: None,
    }
}

pub fn page_b() -> FakePage {
    let mut button = el(Some(1), "button", (10.0, 50.0, 80.0, 20.0));
    button.listeners = vec!["click"];
    FakePage {
        url: "http://fake/b.html".into(),
        elements: vec![
            el(None, "html", (0.0, 0.0, 800.0, 600.0)),
            el(Some(0), "body", (8.0, 8.0, 784.0, 100.0)),
            el(Some(1), "p", (8.0, 8.0, 784.0, 20.0)),
            button,
        ],
        text: "Page B".into(),
        script: Some(("http://fake/b.html".into(), "hash-b".into(), 100)),
    }
}

/// Covered handler range of page B's script.
pub const TOGGLE_RANGE: (u64, u64) = (40, 80);

#[derive(Debug, Default)]
pub struct BrowserState {
    pub page: Option<FakePage>,
    pub loads: u64,
    pub toggles_since_take: u64,
    pub fresh_load: bool,
    pub pressed_at: Option<usize>,
    pub pointer: (f64, f64),
    pub hovered: Option<usize>,
    /// Every Input.* call in order.
    pub inputs: Vec<Value>,
    /// Every (mode, arg) the page script was evaluated with.
    pub evaluations: Vec<(String, Option<usize>)>,
    pub fired: Vec<(String, usize)>,
    pub methods: Vec<String>,
}

pub type Shared = Arc<Mutex<BrowserState>>;

pub struct FakeBrowser {
    pub addr: SocketAddr,
    pub state: Shared,
}

impl FakeBrowser {
    pub fn endpoint(&self) -> String {
        format!("ws://{}/devtools/page/FAKE1", self.addr)
    }
}

pub async fn start_fake_browser() -> FakeBrowser {
    let listener = TcpListener::bind(("127.0.0.1", 0)).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let state: Shared = Arc::default();
    let shared = state.clone();
    tokio::spawn(async move {
        while let Ok((stream, _)) = listener.accept().await {
            let state = shared.clone();
            tokio::spawn(async move {
                let ws = tokio_tungstenite::accept_async(stream).await.unwrap();
                let (mut sink, mut source) = ws.split();
                while let Some(Ok(msg)) = source.next().await {
                    let Message::Text(text) = msg else { continue };
                    let request: Value = serde_json::from_str(&text).unwrap();
                    let out = handle(&state, &request);
                    for m in out {
                        if sink.send(Message::Text(m.to_string().into())).await.is_err() {
                            return;
                        }
                    }
                }
            });
        }
    });
    FakeBrowser { addr, state }
}

/// Splits an instrumentation expression into (props, mode, arg).
pub fn parse_expression(expression: &str) -> (Vec<String>, String, Option<usize>) {
    let code = expression.split("\n//# sourceURL").next().unwrap();
    let call = &code[code.rfind(")([").unwrap() + 2..];
    let close = call.find(']').unwrap();
    let props: Vec<String> = serde_json::from_str(&call[..=close]).unwrap();
    let rest = call[close + 1..].trim_start_matches(", ").trim_end_matches(')');
    let (mode, arg) = rest.split_once(", ").unwrap();
    (props, serde_json::from_str(mode).unwrap(), arg.parse().ok())
}

fn serialized(page: &FakePage) -> String {
    format!("<html data-url=\"{}\"><body><p>{}</p></body></html>", page.url, page.text)
}

fn payload(page: &FakePage) -> Value {
    let records: Vec<Value> = page
        .elements
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut attrs = json!({});
            if let Some(h) = e.href {
                attrs["href"] = json!(h);
            }
            json!({
                "index": i,
                "parent": e.parent,
                "tag": e.tag,
                "attrs": attrs,
                "box": { "x": e.bbox.0, "y": e.bbox.1, "w": e.bbox.2, "h": e.bbox.3 },
                "styles": e.styles,
            })
        })
        .collect();
    json!({ "schema_version": 1, "elements": records })
}

fn hit(page: &FakePage, x: f64, y: f64) -> Option<usize> {
    page.elements.iter().rposition(|e| {
        x >= e.bbox.0 && x <= e.bbox.0 + e.bbox.2 && y >= e.bbox.1 && y <= e.bbox.1 + e.bbox.3
    })
}

fn load(s: &mut BrowserState, page: FakePage, out: &mut Vec<Value>) {
    s.loads += 1;
    if let Some((url, hash, _)) = &page.script {
        out.push(json!({ "method": "Debugger.scriptParsed", "params": {
            "scriptId": format!("{}", 100 + s.loads), "url": url, "hash": hash } }));
        s.fresh_load = true;
    }
    s.page = Some(page);
    s.hovered = None;
    out.push(json!({ "method": "Page.loadEventFired", "params": { "timestamp": 1.0 } }));
}

fn fire(s: &mut BrowserState, event: &str, target: usize, out: &mut Vec<Value>) {
    s.fired.push((event.to_string(), target));
    let page = s.page.clone().unwrap();
    let e = &page.elements[target];
    if event == "click" {
        if e.href == Some("b.html") {
            load(s, page_b(), out);
        } else if e.tag == "button" && page.url.ends_with("b.html") {
            let p = s.page.as_mut().unwrap();
            p.text = if p.text == "Page B" { "Page B (toggled)".into() } else { "Page B".into() };
            s.toggles_since_take += 1;
        }
    }
}

fn pointer_move(s: &mut BrowserState, x: f64, y: f64, out: &mut Vec<Value>) {
    let now = hit(s.page.as_ref().unwrap(), x, y);
    if now != s.hovered {
        if let Some(old) = s.hovered {
            fire(s, "mouseout", old, out);
        }
        if let Some(new) = now {
            fire(s, "mouseover", new, out);
        }
        s.hovered = now;
    }
    s.pointer = (x, y);
}

fn handle(state: &Shared, request: &Value) -> Vec<Value> {
    let mut s = state.lock().unwrap();
    let id = request["id"].clone();
    let method = request["method"].as_str().unwrap().to_string();
    let params = &request["params"];
    s.methods.push(method.clone());
    let mut out = Vec::new();
    let reply = |result: Value| json!({ "id": id, "result": result });
    let result = match method.as_str() {
        m if m.ends_with(".enable") => json!({}),
        "Profiler.startPreciseCoverage" => json!({ "timestamp": 0.0 }),
        "Runtime.releaseObjectGroup" => json!({}),
        "Page.navigate" => {
            let url = params["url"].as_str().unwrap();
            if url.ends_with("missing.html") {
                json!({ "frameId": "F", "errorText": "net::ERR_FILE_NOT_FOUND" })
            } else {
                let mut page = if url.ends_with("b.html") { page_b() } else { page_a() };
                page.url = url.to_string();
                // The reply precedes the load event.
                let mut events = Vec::new();
                load(&mut s, page, &mut events);
                out.push(reply(json!({ "frameId": "F" })));
                out.extend(events);
                return out;
            }
        }
        "Runtime.evaluate" => {
            let (props, mode, arg) = parse_expression(params["expression"].as_str().unwrap());
            let expected: Vec<String> = required_properties().iter().map(|p| p.to_string()).collect();
            assert_eq!(props, expected, "injected property list");
            s.evaluations.push((mode.clone(), arg));
            let page = s.page.clone().unwrap();
            if page.url.ends_with("broken.html") {
                return vec![json!({ "id": id, "result": { "result": { "type": "object" },
                    "exceptionDetails": { "text": "Uncaught", "exception": { "description": "TypeError: boom" } } } })];
            }
            match mode.as_str() {
                "extract" => json!({ "result": { "type": "object", "value": payload(&page) } }),
                "dom" => json!({ "result": { "type": "string", "value": serialized(&page) } }),
                "nodes" => json!({ "result": { "type": "object", "objectId": "nodes-1" } }),
                "locate" => match page.elements.get(arg.unwrap()) {
                    Some(e) => json!({ "result": { "type": "object", "value":
                        { "x": e.bbox.0, "y": e.bbox.1, "w": e.bbox.2, "h": e.bbox.3 } } }),
                    None => json!({ "result": { "type": "object", "subtype": "null", "value": null } }),
                },
                other => panic!("unknown mode {other}"),
            }
        }
        "Runtime.callFunctionOn" => {
            let i = params["arguments"][0]["value"].as_u64().unwrap() as usize;
            if i < s.page.as_ref().unwrap().elements.len() {
                json!({ "result": { "type": "object", "objectId": format!("node-{i}") } })
            } else {
                json!({ "result": { "type": "undefined" } })
            }
        }
        "DOMDebugger.getEventListeners" => {
            let i: usize = params["objectId"].as_str().unwrap()[5..].parse().unwrap();
            let e = s.page.as_ref().unwrap().elements[i].clone();
            if e.query_fails {
                return vec![json!({ "id": id, "error": { "code": -32000, "message": "Could not find node" } })];
            }
            let listeners: Vec<Value> = e.listeners.iter().map(|t| json!({ "type": t, "useCapture": false })).collect();
            json!({ "listeners": listeners })
        }
        "Input.dispatchMouseEvent" => {
            s.inputs.push(params.clone());
            let (x, y) = (params["x"].as_f64().unwrap(), params["y"].as_f64().unwrap());
            pointer_move(&mut s, x, y, &mut out);
            match params["type"].as_str().unwrap() {
                "mousePressed" => {
                    let target = hit(s.page.as_ref().unwrap(), x, y).unwrap();
                    s.pressed_at = Some(target);
                    fire(&mut s, "mousedown", target, &mut out);
                }
                "mouseReleased" => {
                    let pressed = s.pressed_at.take();
                    if let Some(target) = hit(s.page.as_ref().unwrap(), x, y) {
                        if pressed == Some(target) && params["button"] == "left" {
                            fire(&mut s, "click", target, &mut out);
                        }
                    }
                }
                _ => {}
            }
            json!({})
        }
        "Input.dispatchTouchEvent" => {
            s.inputs.push(params.clone());
            if params["type"] == "touchStart" {
                let p = &params["touchPoints"][0];
                let target = hit(s.page.as_ref().unwrap(), p["x"].as_f64().unwrap(), p["y"].as_f64().unwrap()).unwrap();
                fire(&mut s, "touchstart", target, &mut out);
            }
            json!({})
        }
        "Profiler.takePreciseCoverage" => {
            let mut result = Vec::new();
            if let Some((url, _, len)) = s.page.as_ref().and_then(|p| p.script.clone()) {
                let top = u64::from(s.fresh_load);
                result.push(json!({
                    "scriptId": format!("{}", 100 + s.loads),
                    "url": url,
                    "functions": [
                        { "functionName": "", "ranges": [{ "startOffset": 0, "endOffset": len, "count": top }] },
                        { "functionName": "toggle", "ranges": [{ "startOffset": TOGGLE_RANGE.0, "endOffset": TOGGLE_RANGE.1, "count": s.toggles_since_take }] },
                    ],
                }));
            }
            s.fresh_load = false;
            s.toggles_since_take = 0;
            json!({ "result": result, "timestamp": 0.0 })
        }
        other => return vec![json!({ "id": id, "error": { "code": -32601, "message": format!("'{other}' wasn't found") } })],
    };
    out.insert(0, reply(result));
    out
}
