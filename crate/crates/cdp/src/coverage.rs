//! Turning precise-coverage reports into covered character ranges.

use std::collections::HashMap;

use serde::Deserialize;

use stylecrawl_core::engine::coverage::{merge_into, CoverageMap, IntervalSet};

/// Scripts whose url starts with this are the adapter's own and never
/// count toward coverage.
pub const OWN_SCRIPT_PREFIX: &str = "stylecrawl://";

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct CoverageRange {
    pub start_offset: u64,
    pub end_offset: u64,
    pub count: u64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct FunctionCoverage {
    #[serde(default)]
    pub function_name: String,
    pub ranges: Vec<CoverageRange>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct ScriptCoverage {
    pub script_id: String,
    #[serde(default)]
    pub url: String,
    pub functions: Vec<FunctionCoverage>,
}

/// Covered characters of one script in one report. Nested ranges override
/// the ranges enclosing them, so ranges are applied outermost first.
pub fn covered_ranges(script: &ScriptCoverage) -> IntervalSet {
    let mut ranges: Vec<&CoverageRange> = script.functions.iter().flat_map(|f| &f.ranges).collect();
    ranges.sort_by(|a, b| {
        a.start_offset
            .cmp(&b.start_offset)
            .then(b.end_offset.cmp(&a.end_offset))
    });
    let mut set = IntervalSet::new();
    for r in ranges {
        if r.count > 0 {
            set.insert(r.start_offset, r.end_offset);
        } else {
            set.remove(r.start_offset, r.end_offset);
        }
    }
    set
}

/// Stable names for scripts across page reloads, where script ids change.
#[derive(Clone, Debug, Default)]
pub struct ScriptRegistry {
    keys: HashMap<String, String>,
}

impl ScriptRegistry {
    /// Records a `Debugger.scriptParsed` event.
    pub fn script_parsed(&mut self, script_id: &str, url: &str, hash: &str) {
        self.keys
            .insert(script_id.to_string(), format!("{url}#{hash}"));
    }

    pub fn key(&self, script: &ScriptCoverage) -> String {
        self.keys
            .get(&script.script_id)
            .cloned()
            .unwrap_or_else(|| format!("{}#id{}", script.url, script.script_id))
    }

    /// Covered ranges of one report, keyed by script.
    pub fn resolve(&self, report: &[ScriptCoverage]) -> CoverageMap {
        let mut map = CoverageMap::new();
        for script in report {
            if script.url.starts_with(OWN_SCRIPT_PREFIX) {
                continue;
            }
            let set = covered_ranges(script);
            if set.is_empty() {
                continue;
            }
            let mut one = CoverageMap::new();
            one.insert(self.key(script), set);
            merge_into(&mut map, &one);
        }
        map
    }
}
