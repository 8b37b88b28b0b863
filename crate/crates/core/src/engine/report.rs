//! Machine-readable summary of one crawl.

use serde::{Deserialize, Serialize};

use super::{coverage::weight, CrawlBudget, CrawlOutcome, StopReason};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub action: usize,
    pub elapsed_ms: u64,
    pub covered_weight: u64,
    /// Against the maximal set; absent when the run was not compared.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub strategy: String,
    pub seed: u64,
    pub epsilon: f64,
    pub budget: CrawlBudget,
    pub stop: StopReason,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub states: usize,
    pub edges: usize,
    pub actions: usize,
    pub covered_weight: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maximal_weight: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_ratio: Option<f64>,
    /// Coverage after page load, then after every action.
    pub series: Vec<SeriesPoint>,
}

impl RunReport {
    pub fn new(outcome: &CrawlOutcome, seed: u64, epsilon: f64, budget: CrawlBudget) -> Self {
        let maximal_weight = outcome.ledger.maximal_set.as_ref().map(weight);
        let ratio = |w: u64| {
            maximal_weight.map(|m| if m == 0 { 0.0 } else { w as f64 / m as f64 })
        };
        let mut series = vec![SeriesPoint {
            action: 0,
            elapsed_ms: 0,
            covered_weight: outcome.baseline_weight,
            ratio: ratio(outcome.baseline_weight),
        }];
        series.extend(outcome.actions.iter().map(|a| SeriesPoint {
            action: a.index + 1,
            elapsed_ms: a.elapsed_ms,
            covered_weight: a.covered_weight,
            ratio: ratio(a.covered_weight),
        }));
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            strategy: outcome.strategy.to_string(),
            seed,
            epsilon,
            budget,
            stop: outcome.stop,
            complete: outcome.is_complete(),
            failure: outcome.failure.clone(),
            states: outcome.graph.states.len(),
            edges: outcome.graph.edges.len(),
            actions: outcome.actions.len(),
            covered_weight: outcome.ledger.covered_weight(),
            maximal_weight,
            coverage_ratio: outcome.ledger.ratio(),
            series,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `action,elapsed_ms,covered_weight,ratio` rows.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("action,elapsed_ms,covered_weight,ratio\n");
        for p in &self.series {
            let ratio = p.ratio.map(|r| r.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", p.action, p.elapsed_ms, p.covered_weight, ratio));
        }
        out
    }
}
