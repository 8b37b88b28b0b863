use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use stylecrawl_cdp::server::{fixture_dir, FixtureServer};
use stylecrawl_cdp::{BrowserSession, LiveBackend, Quiescence, SessionConfig};
use stylecrawl_core::classifier::{
    evaluate, model_file_name, save_model, train, EvalReport, ModelSet, Predictor, TrainConfig,
};
use stylecrawl_core::dataset::{balance, label_snapshot, load_corpus, save_corpus, split_by_site, Corpus};
use stylecrawl_core::engine::coverage::CoverageLedger;
use stylecrawl_core::engine::{crawl, CrawlBudget, CrawlOutcome, RunReport, Strategy, StrategyKind};
use stylecrawl_core::model::EventType;
use stylecrawl_core::sim::{bundled_fixtures, generate_equivalence_app, MockApp, SignatureOracle, SimBackend};

use crate::args::*;
use crate::chart::{line_chart, Series};
use crate::compare;
use crate::error::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// The `config.json` written by every run.
#[derive(Debug, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub schema_version: u32,
    pub run: Command,
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn execute(command: Command, out: &Path) -> Result<()> {
    let command = match command {
        Command::Rerun(args) => {
            let text = fs::read_to_string(&args.config)
                .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
            let echo: ConfigEcho = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
            if echo.schema_version != CONFIG_SCHEMA_VERSION {
                return Err(CliError::Config(format!("unsupported config version {}", echo.schema_version)));
            }
            if matches!(echo.run, Command::Rerun(_)) {
                return Err(CliError::Config("a config cannot rerun another config".into()));
            }
            echo.run
        }
        other => other,
    };
    let command = with_default_backend(command);
    fs::create_dir_all(out)?;
    let echo = ConfigEcho {
        schema_version: CONFIG_SCHEMA_VERSION,
        run: command.clone(),
    };
    write(out, "config.json", serde_json::to_string_pretty(&echo).expect("config serializes") + "\n")?;
    match command {
        Command::Collect(a) => collect(&a, out),
        Command::Train(a) => train_models(&a, out),
        Command::Eval(a) => eval(&a, out),
        Command::Crawl(a) => crawl_once(&a, out),
        Command::Compare(a) => compare_strategies(&a, out),
        Command::Fixture(a) => fixtures(&a, out),
        Command::Rerun(_) => unreachable!("resolved above"),
    }
}

/// Fills a missing `--backend` from the endpoint env var, so the echoed
/// config names the backend actually used.
fn with_default_backend(mut command: Command) -> Command {
    let backend = match &mut command {
        Command::Collect(a) => &mut a.backend,
        Command::Crawl(a) => &mut a.backend,
        Command::Compare(a) => &mut a.backend,
        _ => return command,
    };
    if backend.backend.is_none() {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            if !url.is_empty() {
                backend.backend = Some(BackendSpec::Cdp(url));
            }
        }
    }
    command
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, contents)?;
    Ok(path)
}

fn backend_of(args: &BackendArgs) -> Result<&BackendSpec> {
    args.backend
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("no --backend given and {ENDPOINT_ENV} is not set")))
}

fn session_config(args: &BackendArgs, site_id: &str) -> SessionConfig {
    SessionConfig {
        quiescence: Quiescence {
            window: Duration::from_millis(args.quiescence_ms),
            ..Quiescence::default()
        },
        site_id: site_id.to_string(),
        ..SessionConfig::default()
    }
}

fn start_url(args: &BackendArgs) -> Result<&str> {
    args.url
        .as_deref()
        .ok_or_else(|| CliError::Config("live crawls need --url".into()))
}

fn budget(args: &BudgetArgs) -> Result<CrawlBudget> {
    let b = CrawlBudget {
        max_actions: (args.budget_actions > 0).then_some(args.budget_actions),
        max_wall_time: (args.budget_seconds > 0).then(|| Duration::from_secs(args.budget_seconds)),
    };
    b.validate()?;
    Ok(b)
}

fn event_choice(name: &str) -> Result<Vec<EventType>> {
    if name.eq_ignore_ascii_case("all") {
        return Ok(EventType::ALL.to_vec());
    }
    name.to_ascii_lowercase()
        .parse::<EventType>()
        .map(|e| vec![e])
        .map_err(|e| CliError::Config(e.to_string()))
}

type SharedPredictor = Arc<dyn Predictor + Send + Sync>;

fn predictor(args: &PredictorArgs, app: Option<&MockApp>) -> Result<Option<SharedPredictor>> {
    if args.oracle {
        let app = app.ok_or_else(|| CliError::Config("--oracle needs a simulated backend".into()))?;
        return Ok(Some(Arc::new(SignatureOracle::for_app(app))));
    }
    match &args.models {
        None => Ok(None),
        Some(dir) => {
            let set = ModelSet::load_dir(dir)?;
            if set.models.is_empty() {
                return Err(CliError::Data(format!("no models in {}", dir.display())));
            }
            Ok(Some(Arc::new(set)))
        }
    }
}

fn strategy(kind: StrategyKind, seed: u64, args: &PredictorArgs, p: &Option<SharedPredictor>) -> Strategy {
    let mut s = Strategy::new(kind, seed).with_epsilon(args.epsilon);
    if let Some(p) = p {
        s = s.with_predictor(p.clone());
    }
    s
}

fn load_app(path: &Path) -> Result<MockApp> {
    Ok(MockApp::load(path)?)
}

/// Every unit of a simulated app, as a coverage map.
fn all_units(app: &MockApp) -> stylecrawl_core::engine::coverage::CoverageMap {
    app.coverage_of(app.spec().units.keys())
}

fn collect(args: &CollectArgs, out: &Path) -> Result<()> {
    let corpus = match backend_of(&args.backend)? {
        BackendSpec::Sim(path) => {
            if args.urls.is_some() || args.fixture_pages {
                return Err(CliError::Config("--urls and --fixture-pages need a live backend".into()));
            }
            let app = load_app(path)?;
            let mut corpus = Corpus::new(format!("sim:{}", app.spec().name));
            for state in 0..app.state_count() {
                let site = format!("{}/{}", app.spec().name, app.state_name(state));
                corpus.add_snapshot(&site, app.snapshot(state));
            }
            corpus
        }
        BackendSpec::Cdp(endpoint) => collect_live(args, endpoint, out)?,
    };
    if corpus.rows.is_empty() {
        return Err(CliError::Data("nothing collected".into()));
    }
    save_corpus(&corpus, out.join("corpus.jsonl"))?;
    let positives: serde_json::Map<String, serde_json::Value> = EventType::ALL
        .iter()
        .map(|e| (e.to_string(), json!(corpus.positives(*e))))
        .collect();
    let summary = json!({
        "sites": corpus.sites.len(),
        "rows": corpus.rows.len(),
        "positives": positives,
    });
    write(out, "collect.json", serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    println!("collected {} elements from {} site(s)", corpus.rows.len(), corpus.sites.len());
    Ok(())
}

fn collect_live(args: &CollectArgs, endpoint: &str, out: &Path) -> Result<Corpus> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = if args.fixture_pages {
            Some(FixtureServer::start(fixture_dir()).await?)
        } else {
            None
        };
        let mut urls: Vec<String> = Vec::new();
        if let Some(file) = &args.urls {
            let text = fs::read_to_string(file)?;
            urls.extend(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(str::to_string),
            );
        }
        if let Some(server) = &server {
            let mut pages: Vec<String> = fs::read_dir(fixture_dir())?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".html"))
                .collect();
            pages.sort();
            urls.extend(pages.iter().map(|p| server.url(p)));
        }
        if urls.is_empty() {
            return Err(CliError::Config("live collection needs --urls or --fixture-pages".into()));
        }
        let mut session = BrowserSession::connect(endpoint, session_config(&args.backend, "live")).await?;
        let mut corpus = Corpus::new(format!("cdp:{endpoint}"));
        let mut log = Vec::new();
        for url in &urls {
            let page = match session.navigate(url).await {
                Ok(page) => page,
                Err(e @ (stylecrawl_cdp::CdpError::Navigation { .. } | stylecrawl_cdp::CdpError::Injection(_) | stylecrawl_cdp::CdpError::Payload(_))) => {
                    log::warn!("skipping {url}: {e}");
                    log.push(json!({ "url": url, "error": e.to_string() }));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let harvest = session.harvest_listeners(&page).await?;
            let labeled = label_snapshot(harvest.snapshot).map_err(|e| CliError::Data(e.to_string()))?;
            let mut one = Corpus::new("");
            one.add_snapshot(url, &labeled);
            let unknown: BTreeSet<usize> = harvest.unknown.iter().copied().collect();
            one.rows.retain(|r| !unknown.contains(&r.element_id));
            corpus.sites.insert(url.clone());
            corpus.rows.extend(one.rows);
            log.push(json!({ "url": url, "elements": page.snapshot.elements.len(), "unknown_listeners": unknown.len() }));
        }
        write(out, "pages.json", serde_json::to_string_pretty(&log).expect("json") + "\n")?;
        Ok(corpus)
    })
}

fn train_models(args: &TrainArgs, out: &Path) -> Result<()> {
    let events = event_choice(&args.event)?;
    if !(args.test_fraction > 0.0 && args.test_fraction < 1.0) {
        return Err(CliError::Config("--test-fraction must lie strictly between 0 and 1".into()));
    }
    let config = TrainConfig {
        boosting_rounds: args.boosting_rounds,
        ..TrainConfig::default()
    };
    let corpus = load_corpus(&args.corpus)?;
    let train_side = if corpus.sites.len() >= 2 {
        let split = split_by_site(&corpus, args.test_fraction, args.seed)?;
        save_corpus(&split.train, out.join("train.jsonl"))?;
        save_corpus(&split.test, out.join("test.jsonl"))?;
        split.train
    } else {
        log::warn!("a single site cannot be split; training on all of it");
        corpus
    };
    let mut summary = Vec::new();
    for event in events {
        let balanced = match balance(&train_side, event, args.seed) {
            Ok(b) => b,
            Err(e) if args.event.eq_ignore_ascii_case("all") => {
                log::warn!("skipping {event}: {e}");
                summary.push(json!({ "event": event, "skipped": e.to_string() }));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let model = match train(&balanced, event, &config, args.seed) {
            Ok(m) => m,
            Err(e @ stylecrawl_core::classifier::ClassifierError::EmptyClass(_)) if args.event.eq_ignore_ascii_case("all") => {
                summary.push(json!({ "event": event, "skipped": e.to_string() }));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        save_model(&model, out.join(model_file_name(event)))?;
        let mut csv = String::from("feature,usage_percent\n");
        for (name, pct) in model.predictor_importance() {
            if pct > 0.0 {
                csv.push_str(&format!("{name},{pct}\n"));
            }
        }
        write(out, &format!("{event}.importance.csv"), csv)?;
        summary.push(json!({
            "event": event,
            "train_rows": train_side.rows.len(),
            "balanced_rows": balanced.rows.len(),
            "positives": balanced.positives(event),
            "stages": model.stages.len(),
        }));
        println!("trained {event}: {} rows, {} stages", balanced.rows.len(), model.stages.len());
    }
    write(out, "train.json", serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    Ok(())
}

fn eval(args: &EvalArgs, out: &Path) -> Result<()> {
    let models = ModelSet::load_dir(&args.models)?;
    if models.models.is_empty() {
        return Err(CliError::Data(format!("no models in {}", args.models.display())));
    }
    let corpus = load_corpus(&args.corpus)?;
    let reports: Vec<(EventType, EvalReport)> = models
        .models
        .iter()
        .map(|(event, m)| (*event, evaluate(m, &corpus, *event)))
        .collect();
    let mut table = String::from("| Event | Class | Precision | Recall | F-measure |\n|---|---|---|---|---|\n");
    for (event, r) in &reports {
        for (class, m) in [("actionable", &r.actionable), ("non-actionable", &r.non_actionable)] {
            table.push_str(&format!(
                "| {event} | {class} | {:.3} | {:.3} | {:.3} |\n",
                m.precision, m.recall, m.f_measure
            ));
        }
    }
    let json: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|(e, r)| (e.to_string(), serde_json::to_value(r).expect("json")))
        .collect();
    write(out, "eval.json", serde_json::to_string_pretty(&json).expect("json") + "\n")?;
    write(out, "eval.md", &table)?;
    print!("{table}");
    Ok(())
}

/// Writes the files describing one run into `dir`.
fn write_run(dir: &Path, outcome: &CrawlOutcome, report: &RunReport) -> Result<()> {
    write(dir, "report.json", report.to_json())?;
    write(dir, "series.csv", report.series_csv())?;
    write(dir, "graph.dot", outcome.graph.to_dot())?;
    write(dir, "graph.json", outcome.graph.to_json())?;
    write(
        dir,
        "actions.json",
        serde_json::to_string_pretty(&outcome.actions).expect("json") + "\n",
    )?;
    Ok(())
}

fn crawl_once(args: &CrawlArgs, out: &Path) -> Result<()> {
    let budget = budget(&args.budget)?;
    let (outcome, maximal) = match backend_of(&args.backend)? {
        BackendSpec::Sim(path) => {
            let app = load_app(path)?;
            let p = predictor(&args.predictor, Some(&app))?;
            let strategy = strategy(args.strategy, args.seed, &args.predictor, &p);
            let maximal = all_units(&app);
            (crawl(&mut SimBackend::new(app), &strategy, budget)?, Some(maximal))
        }
        BackendSpec::Cdp(endpoint) => {
            let p = predictor(&args.predictor, None)?;
            let strategy = strategy(args.strategy, args.seed, &args.predictor, &p);
            let url = start_url(&args.backend)?;
            let mut backend = LiveBackend::connect(endpoint, url, session_config(&args.backend, url))?;
            (crawl(&mut backend, &strategy, budget)?, None)
        }
    };
    let mut outcome = outcome;
    outcome.ledger.maximal_set = maximal;
    let report = RunReport::new(&outcome, args.seed, args.predictor.epsilon, budget);
    write_run(out, &outcome, &report)?;
    let points: Vec<(f64, f64)> = report
        .series
        .iter()
        .map(|p| (p.action as f64, p.ratio.unwrap_or(p.covered_weight as f64)))
        .collect();
    let (y_label, y_max) = match report.maximal_weight {
        Some(_) => ("coverage ratio", 1.0),
        None => ("covered characters", points.iter().map(|p| p.1).fold(0.0, f64::max)),
    };
    let svg = line_chart(
        &format!("{} coverage", report.strategy),
        "actions",
        y_label,
        y_max,
        &[Series { name: report.strategy.clone(), points }],
    );
    write(out, "coverage.svg", svg)?;
    if let Some(f) = &outcome.failure {
        eprintln!("warning: crawl cut short: {f}");
    }
    println!(
        "{}: {} actions, {} states, covered {}{} ({:?})",
        report.strategy,
        report.actions,
        report.states,
        report.covered_weight,
        report.maximal_weight.map(|m| format!("/{m}")).unwrap_or_default(),
        report.stop
    );
    Ok(())
}

fn compare_strategies(args: &CompareArgs, out: &Path) -> Result<()> {
    if args.strategies.is_empty() || args.repeats == 0 {
        return Err(CliError::Config("compare needs at least one strategy and one repeat".into()));
    }
    let budget = budget(&args.budget)?;
    let plan: Vec<(StrategyKind, usize)> = args
        .strategies
        .iter()
        .flat_map(|&k| (0..args.repeats).map(move |r| (k, r)))
        .collect();
    let mut outcomes: Vec<CrawlOutcome> = match backend_of(&args.backend)? {
        BackendSpec::Sim(path) => {
            let app = load_app(path)?;
            let p = predictor(&args.predictor, Some(&app))?;
            let strategies: Vec<Strategy> = plan
                .iter()
                .map(|&(k, r)| strategy(k, args.seed + r as u64, &args.predictor, &p))
                .collect();
            let workers = args.workers.max(1);
            let mut results = Vec::with_capacity(plan.len());
            for chunk in strategies.chunks(workers) {
                let chunk_results: Vec<_> = std::thread::scope(|scope| {
                    let handles: Vec<_> = chunk
                        .iter()
                        .map(|s| {
                            let app = app.clone();
                            scope.spawn(move || crawl(&mut SimBackend::new(app), s, budget))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("crawl worker panicked")).collect()
                });
                for r in chunk_results {
                    results.push(r?);
                }
            }
            results
        }
        BackendSpec::Cdp(endpoint) => {
            let p = predictor(&args.predictor, None)?;
            let url = start_url(&args.backend)?;
            let mut results = Vec::new();
            for &(k, r) in &plan {
                let s = strategy(k, args.seed + r as u64, &args.predictor, &p);
                let mut backend = LiveBackend::connect(endpoint, url, session_config(&args.backend, url))?;
                results.push(crawl(&mut backend, &s, budget)?);
            }
            results
        }
    };
    stylecrawl_core::engine::coverage::finalize_maximal_set(
        outcomes.iter_mut().map(|o| &mut o.ledger as &mut CoverageLedger),
    );
    let mut reports = Vec::new();
    for ((kind, r), outcome) in plan.iter().zip(&outcomes) {
        let report = RunReport::new(outcome, args.seed + *r as u64, args.predictor.epsilon, budget);
        write_run(&out.join("runs").join(format!("{kind}-{r}")), outcome, &report)?;
        if let Some(f) = &outcome.failure {
            eprintln!("warning: {kind} repeat {r} cut short: {f}");
        }
        reports.push((*kind, report));
    }
    let table = compare::Table::new(&args.strategies, &reports);
    write(out, "compare_actions.csv", table.actions_csv())?;
    write(out, "compare_time.csv", table.time_csv())?;
    write(out, "summary.csv", table.summary_csv())?;
    let summary_md = table.summary_markdown();
    write(out, "summary.md", &summary_md)?;
    write(
        out,
        "coverage_actions.svg",
        line_chart("Mean coverage per action", "actions", "coverage ratio", 1.0, &table.action_series()),
    )?;
    write(
        out,
        "coverage_time.svg",
        line_chart("Mean coverage over time", "seconds", "coverage ratio", 1.0, &table.time_series()),
    )?;
    print!("{summary_md}");
    Ok(())
}

fn fixtures(args: &FixtureArgs, out: &Path) -> Result<()> {
    let mut written = Vec::new();
    for (name, spec) in bundled_fixtures() {
        spec.save(out.join(name))?;
        written.push(name.to_string());
    }
    if let Some(m) = args.classes {
        if m == 0 || args.clones == 0 {
            return Err(CliError::Config("--classes and --clones must be positive".into()));
        }
        let name = format!("equivalence_{m}x{}.json", args.clones);
        generate_equivalence_app(m, args.clones, args.seed).save(out.join(&name))?;
        written.push(name);
    }
    for name in written {
        println!("{}", out.join(name).display());
    }
    Ok(())
}
