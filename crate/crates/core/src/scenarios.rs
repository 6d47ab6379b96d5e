//! Deterministic workloads that reproduce common asynchronous-execution
//! defects, each paired with a healthy control.
//!
//! Every scenario runs on the virtual clock and carries the exact set of
//! `(metric, heuristic)` pairs the analyzer must report for it.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::analyzer::{
    analyze_session, AnalysisError, Heuristic, HeuristicConfig, Metric, SessionAnalysis,
};
use crate::report::{DiagnosisReport, DEFAULT_BINS};
use crate::runtime::{
    enter_frame, run_session, ClockSource, PoolConfig, Runtime, RuntimeError, SessionOptions, Task,
    NS_PER_MS,
};
use crate::trace_model::{Mechanism, TraceSession};

const MS: u64 = NS_PER_MS;
const SEC: u64 = 1_000 * MS;

use Heuristic::*;
use Metric::*;

const QUEUING_SPREAD: &[(Metric, Heuristic)] = &[
    (Queuing, HighVariance),
    (Queuing, MaxMinSpread),
    (Queuing, MaxMedianSpread),
];
const LONG_LATENCY: &[(Metric, Heuristic)] = &[(Latency, AbsoluteLatency), (Latency, AnrScale)];
const QUEUING_MAX_MIN: &[(Metric, Heuristic)] = &[(Queuing, MaxMinSpread)];

pub struct Scenario {
    pub name: &'static str,
    pub description: &'static str,
    pub control: bool,
    /// The faulty scenario for a control, or the control for a faulty one.
    pub counterpart: &'static str,
    pub expected_warnings: &'static [(Metric, Heuristic)],
    pub build: fn(&Runtime) -> Result<(), RuntimeError>,
}

impl Scenario {
    pub fn expected(&self) -> BTreeSet<(Metric, Heuristic)> {
        self.expected_warnings.iter().copied().collect()
    }
}

static SCENARIOS: [Scenario; 12] = [
    Scenario {
        name: "sequential_execute",
        description: "thumbnail loads through the default facade queue run one after another",
        control: false,
        counterpart: "parallel_execute",
        expected_warnings: QUEUING_SPREAD,
        build: sequential_execute,
    },
    Scenario {
        name: "parallel_execute",
        description: "the same thumbnail loads submitted to an explicit pool",
        control: true,
        counterpart: "sequential_execute",
        expected_warnings: &[],
        build: parallel_execute,
    },
    Scenario {
        name: "blocking_execution",
        description: "a contacts query that keeps its worker busy for 25 s",
        control: false,
        counterpart: "bounded_execution",
        expected_warnings: LONG_LATENCY,
        build: blocking_execution,
    },
    Scenario {
        name: "bounded_execution",
        description: "the contacts query finishing in 60 ms",
        control: true,
        counterpart: "blocking_execution",
        expected_warnings: &[],
        build: bounded_execution,
    },
    Scenario {
        name: "no_cancel",
        description: "a 12 s download cancelled after 100 ms that never checks for cancellation",
        control: false,
        counterpart: "cancellable_download",
        expected_warnings: LONG_LATENCY,
        build: no_cancel,
    },
    Scenario {
        name: "cancellable_download",
        description: "the same download polling its cancellation flag",
        control: true,
        counterpart: "no_cancel",
        expected_warnings: &[],
        build: cancellable_download,
    },
    Scenario {
        name: "pool_overload",
        description: "UI refreshes stuck behind long sync jobs in a shared two-worker pool",
        control: false,
        counterpart: "dedicated_pool",
        expected_warnings: QUEUING_SPREAD,
        build: pool_overload,
    },
    Scenario {
        name: "dedicated_pool",
        description: "UI refreshes on their own pool, sync jobs on the shared one",
        control: true,
        counterpart: "pool_overload",
        expected_warnings: &[],
        build: dedicated_pool,
    },
    Scenario {
        name: "queue_overload",
        description: "twenty messages posted at once to a single looper",
        control: false,
        counterpart: "spread_queue",
        expected_warnings: QUEUING_MAX_MIN,
        build: queue_overload,
    },
    Scenario {
        name: "spread_queue",
        description: "the same messages posted 50 ms apart",
        control: true,
        counterpart: "queue_overload",
        expected_warnings: &[],
        build: spread_queue,
    },
    Scenario {
        name: "hidden_library_serialization",
        description: "an image library that silently uses the default serial facade",
        control: false,
        counterpart: "library_on_pool",
        expected_warnings: QUEUING_MAX_MIN,
        build: hidden_library_serialization,
    },
    Scenario {
        name: "library_on_pool",
        description: "the image library configured with its own pool",
        control: true,
        counterpart: "hidden_library_serialization",
        expected_warnings: &[],
        build: library_on_pool,
    },
];

pub fn registry() -> &'static [Scenario] {
    &SCENARIOS
}

pub fn find(name: &str) -> Option<&'static Scenario> {
    SCENARIOS.iter().find(|s| s.name == name)
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("scenario workload failed: {0}")]
    Runtime(#[from] RuntimeError),
    #[error("analysis failed: {0}")]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectationCheck {
    pub metric: Metric,
    pub heuristic: Heuristic,
    pub expected: bool,
    pub fired: bool,
}

impl ExpectationCheck {
    pub fn passed(&self) -> bool {
        self.expected == self.fired
    }
}

pub struct ScenarioOutcome {
    pub scenario: &'static Scenario,
    pub session: TraceSession,
    pub analysis: SessionAnalysis,
    pub report: DiagnosisReport,
    /// One entry per expected pair and per unexpected pair that fired.
    pub checks: Vec<ExpectationCheck>,
}

impl ScenarioOutcome {
    pub fn fired(&self) -> BTreeSet<(Metric, Heuristic)> {
        self.report.fired()
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(ExpectationCheck::passed)
    }
}

/// Runs a scenario on the virtual clock and checks its expectations.
pub fn run_scenario(name: &str, cfg: &HeuristicConfig) -> Result<ScenarioOutcome, ScenarioError> {
    run_scenario_on(name, cfg, ClockSource::virtual_clock())
}

/// As [`run_scenario`], on any clock. On a real clock the declared durations
/// are slept, so timings and therefore warnings may drift.
pub fn run_scenario_on(
    name: &str,
    cfg: &HeuristicConfig,
    clock: ClockSource,
) -> Result<ScenarioOutcome, ScenarioError> {
    let scenario = find(name).ok_or_else(|| ScenarioError::UnknownScenario(name.to_string()))?;
    let options = SessionOptions::new(scenario.name, clock).session_id(scenario.name);
    let session = run_session(options, scenario.build)?;
    let analysis = analyze_session(&session, cfg)?;
    let report = DiagnosisReport::build(std::slice::from_ref(&analysis), DEFAULT_BINS);
    let fired = report.fired();
    let expected = scenario.expected();
    let checks = expected
        .union(&fired)
        .map(|&(metric, heuristic)| ExpectationCheck {
            metric,
            heuristic,
            expected: expected.contains(&(metric, heuristic)),
            fired: fired.contains(&(metric, heuristic)),
        })
        .collect();
    Ok(ScenarioOutcome {
        scenario,
        session,
        analysis,
        report,
        checks,
    })
}

// Runs `submit` at each offset, with the UI call stack pushed.
fn on_ui_at<F>(
    rt: &Runtime,
    offsets: impl IntoIterator<Item = u64>,
    frames: &'static [(&'static str, &'static str, u32)],
    submit: F,
) -> Result<(), RuntimeError>
where
    F: Fn(&Runtime) -> Result<(), RuntimeError> + Clone + Send + 'static,
{
    for at in offsets {
        let submit = submit.clone();
        let run = move |rt: &Runtime| {
            let _guards: Vec<_> = frames
                .iter()
                .rev()
                .map(|&(u, s, l)| enter_frame(u, s, l))
                .collect();
            submit(rt)
        };
        if at == 0 {
            run(rt)?;
        } else {
            rt.after(at, run)?;
        }
    }
    Ok(())
}

const GALLERY: &[(&str, &str, u32)] = &[("com.example.gallery.GalleryActivity", "onScroll", 57)];

fn thumbnail() -> Task {
    Task::new("load thumbnail").duration_ms(50).at_site(
        "com.example.gallery.ThumbnailLoader",
        "loadThumbnail",
        112,
    )
}

// A burst of six loads, then eighteen isolated ones a second apart.
fn thumbnail_offsets() -> Vec<u64> {
    let mut at = vec![0; 6];
    at.extend((1..=18).map(|i| i * SEC));
    at
}

fn sequential_execute(rt: &Runtime) -> Result<(), RuntimeError> {
    let facade = rt.async_facade();
    on_ui_at(rt, thumbnail_offsets(), GALLERY, move |rt| {
        facade
            .execute_default(rt.main_thread(), thumbnail())
            .map(drop)
    })
}

fn parallel_execute(rt: &Runtime) -> Result<(), RuntimeError> {
    let facade = rt.async_facade();
    let pool = rt.pool(PoolConfig::new(1, 6))?;
    on_ui_at(rt, thumbnail_offsets(), GALLERY, move |rt| {
        facade
            .execute_on(&pool, rt.main_thread(), thumbnail())
            .map(drop)
    })
}

const CONTACTS: &[(&str, &str, u32)] = &[("com.example.contacts.ContactsActivity", "onResume", 88)];

fn contacts_query(rt: &Runtime, duration_ms: u64) -> Result<(), RuntimeError> {
    let queue = rt.serial_queue(rt.main_thread(), Mechanism::AsyncQuery, "contacts-query")?;
    on_ui_at(rt, [0], CONTACTS, move |rt| {
        let task = Task::new("query contacts")
            .duration_ms(duration_ms)
            .at_site("com.example.contacts.ContactsRepository", "queryAll", 41);
        queue.submit(rt.main_thread(), task).map(drop)
    })
}

fn blocking_execution(rt: &Runtime) -> Result<(), RuntimeError> {
    contacts_query(rt, 25_000)
}

fn bounded_execution(rt: &Runtime) -> Result<(), RuntimeError> {
    contacts_query(rt, 60)
}

const DOWNLOADS: &[(&str, &str, u32)] = &[("com.example.files.DownloadActivity", "onStart", 73)];

fn download(rt: &Runtime, checking: bool) -> Result<(), RuntimeError> {
    let pool = rt.pool(PoolConfig::fixed(2))?;
    on_ui_at(rt, [0], DOWNLOADS, move |rt| {
        let mut task = Task::new("download archive").duration_ms(12_000).at_site(
            "com.example.files.Downloader",
            "fetch",
            150,
        );
        if checking {
            task = task.checking();
        }
        let key = pool.submit(rt.main_thread(), task)?;
        rt.after(100 * MS, move |rt| rt.cancel(&key).map(drop))
    })
}

fn no_cancel(rt: &Runtime) -> Result<(), RuntimeError> {
    download(rt, false)
}

fn cancellable_download(rt: &Runtime) -> Result<(), RuntimeError> {
    download(rt, true)
}

const FEED: &[(&str, &str, u32)] = &[("com.example.news.FeedActivity", "onRefresh", 64)];

fn refresh_offsets() -> impl Iterator<Item = u64> {
    (0..20).map(|i| 250 * MS + i * 500 * MS)
}

fn refresh() -> Task {
    Task::new("refresh feed item").duration_ms(40).at_site(
        "com.example.news.FeedPresenter",
        "refreshItem",
        97,
    )
}

fn sync_jobs(rt: &Runtime, shared: &crate::runtime::Pool) -> Result<(), RuntimeError> {
    let adapter = rt.system_thread("sync-adapter")?;
    let _frame = enter_frame("com.example.news.SyncAdapter", "onPerformSync", 30);
    for _ in 0..2 {
        let job = Task::new("sync account").duration_ms(2_000).at_site(
            "com.example.news.SyncAdapter",
            "syncAccount",
            58,
        );
        shared.submit(adapter, job)?;
    }
    Ok(())
}

fn pool_overload(rt: &Runtime) -> Result<(), RuntimeError> {
    let shared = rt.pool(PoolConfig::fixed(2))?;
    sync_jobs(rt, &shared)?;
    on_ui_at(rt, refresh_offsets(), FEED, move |rt| {
        shared.submit(rt.main_thread(), refresh()).map(drop)
    })
}

fn dedicated_pool(rt: &Runtime) -> Result<(), RuntimeError> {
    let shared = rt.pool(PoolConfig::fixed(2))?;
    sync_jobs(rt, &shared)?;
    let ui = rt.pool(PoolConfig::fixed(2))?;
    on_ui_at(rt, refresh_offsets(), FEED, move |rt| {
        ui.submit(rt.main_thread(), refresh()).map(drop)
    })
}

const CHAT: &[(&str, &str, u32)] = &[("com.example.chat.ChatActivity", "onMessagesLoaded", 120)];

fn post_messages(rt: &Runtime, spacing_ms: u64) -> Result<(), RuntimeError> {
    let looper = rt.serial_queue(rt.main_thread(), Mechanism::HandlerLooper, "chat-worker")?;
    on_ui_at(rt, (0..20).map(|i| i * spacing_ms * MS), CHAT, move |rt| {
        let task = Task::new("render message").duration_ms(30).at_site(
            "com.example.chat.MessageHandler",
            "handleMessage",
            45,
        );
        looper.submit(rt.main_thread(), task).map(drop)
    })
}

fn queue_overload(rt: &Runtime) -> Result<(), RuntimeError> {
    post_messages(rt, 0)
}

fn spread_queue(rt: &Runtime) -> Result<(), RuntimeError> {
    post_messages(rt, 50)
}

const FEED_IMAGES: &[(&str, &str, u32)] = &[
    ("com.example.feed.FeedActivity", "onCreate", 33),
    ("com.thirdparty.imagelib.ImageLib", "fetch", 210),
];

fn image_fetch() -> Task {
    Task::new("decode image").duration_ms(80).at_site(
        "com.thirdparty.imagelib.internal.Dispatcher",
        "enqueue",
        88,
    )
}

fn hidden_library_serialization(rt: &Runtime) -> Result<(), RuntimeError> {
    let facade = rt.async_facade();
    on_ui_at(rt, [0; 8], FEED_IMAGES, move |rt| {
        facade
            .execute_default(rt.main_thread(), image_fetch())
            .map(drop)
    })
}

fn library_on_pool(rt: &Runtime) -> Result<(), RuntimeError> {
    let facade = rt.async_facade();
    let pool = rt.pool(PoolConfig::fixed(8))?;
    on_ui_at(rt, [0; 8], FEED_IMAGES, move |rt| {
        facade
            .execute_on(&pool, rt.main_thread(), image_fetch())
            .map(drop)
    })
}
