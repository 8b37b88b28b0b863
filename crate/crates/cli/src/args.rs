use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use stylecrawl_core::engine::StrategyKind;

/// Env var naming the default DevTools endpoint.
pub const ENDPOINT_ENV: &str = "STYLECRAWL_CDP_ENDPOINT";

#[derive(Debug, Parser)]
#[command(name = "stylecrawl", version, about = "Style-guided web app exploration")]
pub struct Cli {
    /// Output directory; every file a run writes goes under it.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

/// Everything needed to rerun a command; written as `config.json`.
#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Build a labeled corpus from live pages or a simulated app.
    Collect(CollectArgs),
    /// Train one model per event type.
    Train(TrainArgs),
    /// Score models against a corpus.
    Eval(EvalArgs),
    /// Crawl with one strategy.
    Crawl(CrawlArgs),
    /// Crawl with several strategies and average their coverage.
    Compare(CompareArgs),
    /// Write the bundled simulated apps.
    Fixture(FixtureArgs),
    /// Run the command echoed in a config file again.
    Rerun(RerunArgs),
}

/// Where pages come from: `sim:<app.json>` or `cdp:<ws-url>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BackendSpec {
    Sim(PathBuf),
    Cdp(String),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("sim", path)) if !path.is_empty() => Ok(BackendSpec::Sim(path.into())),
            Some(("cdp", url)) if url.starts_with("ws://") || url.starts_with("wss://") => {
                Ok(BackendSpec::Cdp(url.to_string()))
            }
            _ => Err(format!("expected sim:<path> or cdp:<ws-url>, got `{s}`")),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Sim(p) => write!(f, "sim:{}", p.display()),
            BackendSpec::Cdp(url) => write!(f, "cdp:{url}"),
        }
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct BackendArgs {
    /// `sim:<app.json>` or `cdp:<ws-url>` (a page target's WebSocket URL).
    #[arg(long)]
    pub backend: Option<BackendSpec>,
    /// Start page for live crawls.
    #[arg(long)]
    pub url: Option<String>,
    /// DOM quiet period before a live page counts as settled.
    #[arg(long, default_value_t = 500)]
    pub quiescence_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = 100)]
    pub budget_actions: usize,
    #[arg(long, default_value_t = 600)]
    pub budget_seconds: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct CollectArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// File with one URL per line (live collection).
    #[arg(long)]
    pub urls: Option<PathBuf>,
    /// Collect the bundled fixture pages through a local file server.
    #[arg(long)]
    pub fixture_pages: bool,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// An event type or `all`.
    #[arg(long, default_value = "all")]
    pub event: String,
    #[arg(long, default_value_t = 10)]
    pub boosting_rounds: usize,
    /// Share of sites held out for evaluation.
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Directory of `<event>.model.json` files.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct PredictorArgs {
    /// Directory of trained models, for the STYLEX strategies.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Use the simulated app's ground truth as the predictor.
    #[arg(long, conflicts_with = "models")]
    pub oracle: bool,
    /// Style-distance threshold for treating elements as equivalent.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct CrawlArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, default_value = "DEF")]
    pub strategy: StrategyKind,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',', default_value = "DEF,RND,STYLEX_CLK,STYLEX_EVNTS")]
    pub strategies: Vec<StrategyKind>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Repeat `r` uses seed `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Simulated runs in parallel; live runs are always sequential.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct FixtureArgs {
    /// Also write an equivalence app with this many classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Clones per class of the equivalence app.
    #[arg(long, default_value_t = 10)]
    pub clones: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    pub config: PathBuf,
}
