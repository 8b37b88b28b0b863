//! Runs the page script under node against stub documents. Skipped when
//! node is not installed.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use serde_json::{json, Value};

use stylecrawl_cdp::payload::{payload_to_snapshot, ExtractionPayload};
use stylecrawl_core::features::{css_initial_values, required_properties};
use stylecrawl_core::model::{feature_names, FeatureValue};

fn node_available() -> bool {
    Command::new("node").arg("--version").output().map(|o| o.status.success()).unwrap_or(false)
}

fn script_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("src").join("instrument.js")
}

fn run(tree: &Value, mode: &str, arg: Value) -> Value {
    let harness = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/js/run_instrument.js");
    let mut child = Command::new("node")
        .arg(harness)
        .arg(script_path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let input = json!({
        "tree": tree,
        "initial": css_initial_values(),
        "props": required_properties(),
        "mode": mode,
        "arg": arg,
    });
    child.stdin.take().unwrap().write_all(input.to_string().as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "node failed");
    serde_json::from_slice(&out.stdout).unwrap()
}

/// html > body > div, as laid out by the three-element fixture page.
fn three_elements() -> Value {
    json!({
        "tag": "html", "box": { "x": 0, "y": 0, "w": 800, "h": 40 },
        "children": [{
            "tag": "body", "box": { "x": 0, "y": 0, "w": 800, "h": 40 },
            "children": [{
                "tag": "div",
                "box": { "x": 20, "y": 10, "w": 120, "h": 30 },
                "styles": { "cursor": "pointer", "width": "120px" },
            }],
        }],
    })
}

macro_rules! require_node {
    () => {
        if !node_available() {
            eprintln!("node not installed; skipping");
            return;
        }
    };
}

#[test]
fn script_parses() {
    require_node!();
    let status = Command::new("node").arg("--check").arg(script_path()).status().unwrap();
    assert!(status.success());
}

#[test]
fn three_element_page() {
    require_node!();
    let out = run(&three_elements(), "extract", Value::Null);
    assert_eq!(out["before"], out["after"], "extraction changed the document");
    let payload: ExtractionPayload = serde_json::from_value(out["result"].clone()).unwrap();
    payload.validate().unwrap();
    let parents: Vec<_> = payload.elements.iter().map(|r| r.parent).collect();
    assert_eq!(parents, vec![None, Some(0), Some(1)]);
    assert_eq!(payload.elements[2].styles["cursor"], "pointer");
    assert_eq!(payload.elements[2].bbox.x, 20.0);
    assert_eq!(payload.elements[2].bbox.h, 30.0);
    assert_eq!(payload.elements[2].styles.len(), required_properties().len());

    let page = payload_to_snapshot(&payload, "p", "site", String::new()).unwrap();
    let s = &page.snapshot;
    assert_eq!(s.elements.len(), 3);
    let div = &s.elements[2].features;
    assert_eq!(div.values().len(), feature_names().len());
    assert_eq!(div.css_value("cursor"), Some(&FeatureValue::Cat("pointer".into())));
    assert_eq!(div.dom_depth, 2);
    assert_eq!(s.elements[0].features.descendant_count, 2);
}

#[test]
fn preorder_numbering_and_attributes() {
    require_node!();
    let tree = json!({
        "tag": "html", "box": { "x": 0, "y": 0, "w": 1, "h": 1 },
        "children": [
            { "tag": "head", "box": { "x": 0, "y": 0, "w": 0, "h": 0 } },
            { "tag": "body", "box": { "x": 0, "y": 0, "w": 1, "h": 1 }, "children": [
                { "tag": "A", "attrs": { "href": "/x" }, "box": { "x": -50, "y": -5, "w": 10, "h": 10 }, "children": [
                    { "tag": "span", "box": { "x": 0, "y": 0, "w": 1, "h": 1 } },
                ] },
                { "tag": "input", "attrs": { "type": "submit" }, "box": { "x": 0, "y": 0, "w": 1, "h": 1 } },
                { "tag": "div", "throws": true, "box": { "x": 0, "y": 0, "w": 1, "h": 1 } },
            ] },
        ],
    });
    let out = run(&tree, "extract", Value::Null);
    let payload: ExtractionPayload = serde_json::from_value(out["result"].clone()).unwrap();
    payload.validate().unwrap();
    let tags: Vec<_> = payload.elements.iter().map(|r| r.tag.as_str()).collect();
    assert_eq!(tags, ["html", "head", "body", "a", "span", "input", "div"]);
    let parents: Vec<_> = payload.elements.iter().map(|r| r.parent).collect();
    assert_eq!(parents, [None, Some(0), Some(0), Some(2), Some(3), Some(2), Some(2)]);
    assert_eq!(payload.elements[3].attrs.href.as_deref(), Some("/x"));
    assert_eq!((payload.elements[3].bbox.x, payload.elements[3].bbox.y), (-50.0, -5.0));
    assert_eq!(payload.elements[5].attrs.input_type.as_deref(), Some("submit"));
    assert!(payload.elements[6].error.is_some());

    let page = payload_to_snapshot(&payload, "p", "site", String::new()).unwrap();
    assert_eq!(page.skipped, vec![6]);
    assert!(page.snapshot.elements[3].is_default_actionable);
    assert!(page.snapshot.elements[5].is_default_actionable);
}

#[test]
fn other_modes() {
    require_node!();
    let tree = three_elements();
    let nodes = run(&tree, "nodes", Value::Null);
    assert_eq!(nodes["result"], json!(["html", "body", "div"]));
    let dom = run(&tree, "dom", Value::Null);
    assert_eq!(dom["result"], "<html><body><div></div></body></html>");
    let located = run(&tree, "locate", json!(2));
    assert_eq!(located["result"], json!({ "x": 20, "y": 10, "w": 120, "h": 30 }));
    assert_eq!(located["scrolled"], json!(["div"]));
    assert_eq!(run(&tree, "locate", json!(7))["result"], Value::Null);
}
