//! Averaging repeated runs per strategy.

use stylecrawl_core::engine::{RunReport, StrategyKind};

use crate::chart::Series;

/// Points on the time axis of the averaged table.
const TIME_STEPS: usize = 20;

pub struct Table<'a> {
    strategies: Vec<StrategyKind>,
    runs: Vec<Vec<&'a RunReport>>,
    max_actions: usize,
    max_elapsed_ms: u64,
}

fn ratio_after(report: &RunReport, action: usize) -> f64 {
    let i = action.min(report.series.len() - 1);
    report.series[i].ratio.unwrap_or(0.0)
}

fn ratio_at_time(report: &RunReport, ms: u64) -> f64 {
    report
        .series
        .iter()
        .take_while(|p| p.elapsed_ms <= ms)
        .last()
        .and_then(|p| p.ratio)
        .unwrap_or(0.0)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl<'a> Table<'a> {
    pub fn new(strategies: &[StrategyKind], reports: &'a [(StrategyKind, RunReport)]) -> Self {
        let mut unique = Vec::new();
        for &s in strategies {
            if !unique.contains(&s) {
                unique.push(s);
            }
        }
        let runs = unique
            .iter()
            .map(|s| reports.iter().filter(|(k, _)| k == s).map(|(_, r)| r).collect())
            .collect();
        Table {
            strategies: unique,
            runs,
            max_actions: reports.iter().map(|(_, r)| r.actions).max().unwrap_or(0),
            max_elapsed_ms: reports
                .iter()
                .flat_map(|(_, r)| r.series.last().map(|p| p.elapsed_ms))
                .max()
                .unwrap_or(0),
        }
    }

    fn time_grid(&self) -> Vec<u64> {
        (0..=TIME_STEPS)
            .map(|i| self.max_elapsed_ms * i as u64 / TIME_STEPS as u64)
            .collect()
    }

    fn header(&self, first: &str) -> String {
        let names: Vec<String> = self.strategies.iter().map(|s| s.to_string()).collect();
        format!("{first},{}\n", names.join(","))
    }

    /// Mean coverage ratio after each action; finished runs hold their
    /// last value.
    pub fn actions_csv(&self) -> String {
        let mut out = self.header("action");
        for a in 0..=self.max_actions {
            let row: Vec<String> = self
                .runs
                .iter()
                .map(|rs| format!("{:.6}", mean(rs.iter().map(|r| ratio_after(r, a)))))
                .collect();
            out.push_str(&format!("{a},{}\n", row.join(",")));
        }
        out
    }

    pub fn time_csv(&self) -> String {
        let mut out = self.header("elapsed_ms");
        for t in self.time_grid() {
            let row: Vec<String> = self
                .runs
                .iter()
                .map(|rs| format!("{:.6}", mean(rs.iter().map(|r| ratio_at_time(r, t)))))
                .collect();
            out.push_str(&format!("{t},{}\n", row.join(",")));
        }
        out
    }

    fn summary_rows(&self) -> Vec<[String; 8]> {
        self.strategies
            .iter()
            .zip(&self.runs)
            .map(|(s, rs)| {
                let finals: Vec<f64> = rs.iter().map(|r| r.coverage_ratio.unwrap_or(0.0)).collect();
                // First action at which a run reached the full maximal set.
                let to_full: Option<Vec<usize>> = rs
                    .iter()
                    .map(|r| r.series.iter().find(|p| p.ratio == Some(1.0)).map(|p| p.action))
                    .collect();
                [
                    s.to_string(),
                    rs.len().to_string(),
                    format!("{:.2}", mean(rs.iter().map(|r| r.actions as f64))),
                    format!("{:.2}", mean(rs.iter().map(|r| r.states as f64))),
                    format!("{:.6}", mean(finals.iter().copied())),
                    format!("{:.6}", finals.iter().copied().fold(f64::INFINITY, f64::min)),
                    format!("{:.6}", finals.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                    to_full
                        .map(|v| format!("{:.2}", mean(v.iter().map(|&a| a as f64))))
                        .unwrap_or_default(),
                ]
            })
            .collect()
    }

    const COLUMNS: [&'static str; 8] = [
        "strategy",
        "repeats",
        "mean_actions",
        "mean_states",
        "mean_final_ratio",
        "min_final_ratio",
        "max_final_ratio",
        "mean_actions_to_full",
    ];

    pub fn summary_csv(&self) -> String {
        let mut out = Self::COLUMNS.join(",") + "\n";
        for row in self.summary_rows() {
            out.push_str(&(row.join(",") + "\n"));
        }
        out
    }

    pub fn summary_markdown(&self) -> String {
        let mut out = format!("| {} |\n|{}\n", Self::COLUMNS.join(" | "), "---|".repeat(Self::COLUMNS.len()));
        for row in self.summary_rows() {
            let cells: Vec<&str> = row.iter().map(|c| if c.is_empty() { "-" } else { c.as_str() }).collect();
            out.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
        out
    }

    pub fn action_series(&self) -> Vec<Series> {
        self.strategies
            .iter()
            .zip(&self.runs)
            .map(|(s, rs)| Series {
                name: s.to_string(),
                points: (0..=self.max_actions)
                    .map(|a| (a as f64, mean(rs.iter().map(|r| ratio_after(r, a)))))
                    .collect(),
            })
            .collect()
    }

    pub fn time_series(&self) -> Vec<Series> {
        self.strategies
            .iter()
            .zip(&self.runs)
            .map(|(s, rs)| Series {
                name: s.to_string(),
                points: self
                    .time_grid()
                    .into_iter()
                    .map(|t| (t as f64 / 1000.0, mean(rs.iter().map(|r| ratio_at_time(r, t)))))
                    .collect(),
            })
            .collect()
    }
}
