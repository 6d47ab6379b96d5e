//! Instrumented asynchronous execution mechanisms.
//!
//! A [`Runtime`] is created by [`run_session`] and handed to a workload. Every
//! submission path emits a `Schedule` event carrying the submitter's
//! execution context; workers emit `Start` and `End` (or `Cancel`). Two
//! backends share the same API:
//!
//! * **virtual**: a single-threaded discrete-event scheduler. Tasks declare
//!   synthetic durations and the clock jumps between events, so traces are
//!   deterministic and timings exact.
//! * **real**: OS threads, a monotonic clock and per-thread event buffers.
//!
//! Mechanisms: [`Runtime::spawn_thread`], [`SerialQueue`] (looper, query
//! handler, service), [`Pool`] and the [`AsyncFacade`] with its global
//! serial default path.

mod clock;
mod context;
mod emit;
mod sim;
mod threaded;

use std::collections::HashMap;
use std::fmt;
use std::panic::Location;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

pub use clock::{ClockMode, ClockSource};
pub use context::{enter_frame, FrameGuard, INTERNAL_UNIT_PREFIX, MAX_CONTEXT_DEPTH};

use crate::trace_model::{EventKind, Mechanism, TaskEvent, TaskKey, ThreadIdentity, TraceSession};
use context::Site;
use emit::EventSink;

pub const NS_PER_MS: u64 = 1_000_000;

/// Default idle time after which pool workers above the core size retire.
pub const DEFAULT_KEEP_ALIVE_NS: u64 = 10 * NS_PER_MS;

/// Default cancellation polling interval for checking tasks.
pub const DEFAULT_CANCEL_POLL_NS: u64 = NS_PER_MS;

/// Thread id of the main thread in every session.
pub const MAIN_THREAD_ID: u64 = 1;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("session is closed")]
    SessionClosed,
    #[error("serial queue worker has quit")]
    WorkerDead,
    #[error("pool is shut down")]
    PoolShutDown,
    #[error("pool queue is full")]
    QueueFull,
    #[error("no service registered under `{0}`")]
    UnknownService(String),
    #[error("service `{0}` is already registered")]
    DuplicateService(String),
    #[error("unknown task `{0}`")]
    UnknownTask(TaskKey),
    #[error("invalid task: {0}")]
    InvalidTask(&'static str),
    #[error("invalid pool configuration: {0}")]
    InvalidPool(&'static str),
    #[error("operation requires a virtual clock")]
    NotVirtual,
    #[error("drain timed out with {incomplete} task(s) still open")]
    DrainTimeout {
        session: Box<TraceSession>,
        incomplete: usize,
    },
}

/// What happened to a cancellation request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancelOutcome {
    /// The task was still queued and will never start.
    RemovedFromQueue,
    /// The task is running and polls for cancellation; it ends early.
    SignalledRunning,
    /// The task had already finished.
    TooLateFinished,
    /// The task is running and never polls; it runs to completion.
    NotCancellable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Work {
    Unspecified,
    Finite(u64),
    Forever,
}

pub type TaskBody = Box<dyn FnOnce(&TaskContext) + Send + 'static>;

/// A unit of work submitted to one of the mechanisms.
pub struct Task {
    label: String,
    body: Option<TaskBody>,
    work: Work,
    cancel_poll_ns: Option<u64>,
    site: Option<String>,
}

impl Task {
    pub fn new(label: impl Into<String>) -> Self {
        Task {
            label: label.into(),
            body: None,
            work: Work::Unspecified,
            cancel_poll_ns: None,
            site: None,
        }
    }

    /// Synthetic execution time. The virtual clock requires one; the real
    /// clock sleeps for it after the body returns.
    pub fn duration_ns(mut self, ns: u64) -> Self {
        self.work = Work::Finite(ns);
        self
    }

    pub fn duration_ms(self, ms: u64) -> Self {
        self.duration_ns(ms * NS_PER_MS)
    }

    /// The task never finishes on its own.
    pub fn never_ending(mut self) -> Self {
        self.work = Work::Forever;
        self
    }

    /// The task polls for cancellation every [`DEFAULT_CANCEL_POLL_NS`].
    pub fn checking(self) -> Self {
        self.checking_every(DEFAULT_CANCEL_POLL_NS)
    }

    pub fn checking_every(mut self, interval_ns: u64) -> Self {
        self.cancel_poll_ns = Some(interval_ns.max(1));
        self
    }

    /// Overrides the captured submission-site frame.
    pub fn at_site(mut self, unit: &str, symbol: &str, line: u32) -> Self {
        self.site = Some(crate::trace_model::frame(unit, symbol, line));
        self
    }

    pub fn body(mut self, f: impl FnOnce(&TaskContext) + Send + 'static) -> Self {
        self.body = Some(Box::new(f));
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn cancellation_check(&self) -> bool {
        self.cancel_poll_ns.is_some()
    }

    fn validate(&self, mode: ClockMode) -> Result<(), RuntimeError> {
        if self.label.is_empty() {
            return Err(RuntimeError::InvalidTask("label must not be empty"));
        }
        if mode == ClockMode::Virtual && self.work == Work::Unspecified {
            return Err(RuntimeError::InvalidTask(
                "virtual clock requires a synthetic duration",
            ));
        }
        Ok(())
    }

    fn site(&self, location: &'static Location<'static>, api: &'static str) -> Site {
        match &self.site {
            Some(f) => Site::Explicit(f.clone()),
            None => Site::Caller { location, api },
        }
    }
}

impl fmt::Debug for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Task")
            .field("label", &self.label)
            .field("work", &self.work)
            .field("cancel_poll_ns", &self.cancel_poll_ns)
            .finish_non_exhaustive()
    }
}

const QUEUED: u8 = 0;
const RUNNING: u8 = 1;
const CANCEL_REQUESTED: u8 = 2;
const DONE: u8 = 3;
const CANCELLED: u8 = 4;

/// Shared lifecycle state of one submitted task.
#[derive(Debug)]
pub(crate) struct TaskControl {
    state: AtomicU8,
    checking: bool,
    mechanism: Mechanism,
}

impl TaskControl {
    fn new(checking: bool, mechanism: Mechanism) -> Arc<Self> {
        Arc::new(TaskControl {
            state: AtomicU8::new(QUEUED),
            checking,
            mechanism,
        })
    }

    fn state(&self) -> u8 {
        self.state.load(Ordering::Acquire)
    }

    fn transition(&self, from: u8, to: u8) -> bool {
        self.state
            .compare_exchange(from, to, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }

    fn cancel_requested(&self) -> bool {
        matches!(self.state(), CANCEL_REQUESTED | CANCELLED)
    }
}

/// Handed to a task body while it runs.
pub struct TaskContext {
    runtime: Runtime,
    thread: ThreadIdentity,
    key: TaskKey,
    control: Arc<TaskControl>,
}

impl TaskContext {
    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    /// The thread executing this task; use it as the requester for nested
    /// submissions.
    pub fn thread(&self) -> ThreadIdentity {
        self.thread
    }

    pub fn task_key(&self) -> &TaskKey {
        &self.key
    }

    pub fn is_cancelled(&self) -> bool {
        self.control.cancel_requested()
    }
}

/// Pool sizing. Workers grow on demand up to `max_size` before anything is
/// queued; workers above `core_size` retire after `keep_alive_ns` idle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    pub core_size: usize,
    pub max_size: usize,
    pub queue_bound: Option<usize>,
    pub keep_alive_ns: u64,
}

impl PoolConfig {
    pub fn fixed(size: usize) -> Self {
        PoolConfig {
            core_size: size,
            max_size: size,
            queue_bound: None,
            keep_alive_ns: DEFAULT_KEEP_ALIVE_NS,
        }
    }

    pub fn new(core_size: usize, max_size: usize) -> Self {
        PoolConfig {
            core_size,
            max_size,
            ..PoolConfig::fixed(max_size)
        }
    }

    pub fn queue_bound(mut self, bound: usize) -> Self {
        self.queue_bound = Some(bound);
        self
    }

    pub fn keep_alive_ns(mut self, ns: u64) -> Self {
        self.keep_alive_ns = ns;
        self
    }

    fn validate(&self) -> Result<(), RuntimeError> {
        if self.max_size == 0 {
            return Err(RuntimeError::InvalidPool("max_size must be positive"));
        }
        if self.core_size > self.max_size {
            return Err(RuntimeError::InvalidPool("core_size exceeds max_size"));
        }
        if self.queue_bound == Some(0) {
            return Err(RuntimeError::InvalidPool("queue bound must be positive"));
        }
        Ok(())
    }
}

/// Session settings.
#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub session_id: String,
    pub config_label: String,
    pub clock: ClockSource,
    /// Virtual nanoseconds (virtual clock) or wall nanoseconds (real clock)
    /// to wait for all tasks before giving up.
    pub drain_timeout_ns: u64,
    /// When false no events are recorded; used to measure instrumentation
    /// overhead.
    pub emit_events: bool,
}

impl SessionOptions {
    pub fn new(config_label: impl Into<String>, clock: ClockSource) -> Self {
        let drain_timeout_ns = match clock.mode() {
            ClockMode::Virtual => 3_600_000 * NS_PER_MS,
            ClockMode::RealMonotonic => 60_000 * NS_PER_MS,
        };
        SessionOptions {
            session_id: "session".to_string(),
            config_label: config_label.into(),
            clock,
            drain_timeout_ns,
            emit_events: true,
        }
    }

    pub fn session_id(mut self, id: impl Into<String>) -> Self {
        self.session_id = id.into();
        self
    }

    pub fn drain_timeout_ns(mut self, ns: u64) -> Self {
        self.drain_timeout_ns = ns;
        self
    }

    pub fn emit_events(mut self, on: bool) -> Self {
        self.emit_events = on;
        self
    }
}

/// Runs `workload` on a fresh runtime and returns the drained trace.
pub fn session_run<F>(
    clock: ClockSource,
    config_label: impl Into<String>,
    workload: F,
) -> Result<TraceSession, RuntimeError>
where
    F: FnOnce(&Runtime) -> Result<(), RuntimeError>,
{
    run_session(SessionOptions::new(config_label, clock), workload)
}

/// Like [`session_run`] with full options.
pub fn run_session<F>(options: SessionOptions, workload: F) -> Result<TraceSession, RuntimeError>
where
    F: FnOnce(&Runtime) -> Result<(), RuntimeError>,
{
    let rt = Runtime::new(options);
    let main = rt.main_thread();
    let workload_result = {
        let _current = CurrentThread::enter(rt.inner.sink.uid(), main);
        let saved = context::swap_frames(Vec::new());
        let r = workload(&rt);
        context::swap_frames(saved);
        r
    };
    let drained = match &rt.inner.backend {
        Backend::Virtual(_) => sim::drain(&rt),
        Backend::Real(_) => threaded::drain(&rt),
    };
    rt.inner.closed.store(true, Ordering::Release);
    if let Backend::Real(_) = &rt.inner.backend {
        threaded::shutdown(&rt, drained.is_ok());
    }
    let session = rt.snapshot();
    workload_result?;
    if let Some(e) = rt.inner.callback_error.lock().unwrap().take() {
        return Err(e);
    }
    match drained {
        Ok(()) => Ok(session),
        Err(incomplete) => Err(RuntimeError::DrainTimeout {
            session: Box::new(session),
            incomplete,
        }),
    }
}

thread_local! {
    static CURRENT: std::cell::RefCell<Vec<(u64, ThreadIdentity)>> =
        const { std::cell::RefCell::new(Vec::new()) };
}

// Marks which simulated/real thread the current OS thread is acting as.
pub(crate) struct CurrentThread;

impl CurrentThread {
    pub(crate) fn enter(uid: u64, thread: ThreadIdentity) -> CurrentThread {
        CURRENT.with(|c| c.borrow_mut().push((uid, thread)));
        CurrentThread
    }

    fn get(uid: u64) -> Option<ThreadIdentity> {
        CURRENT.with(|c| {
            c.borrow()
                .iter()
                .rev()
                .find(|(u, _)| *u == uid)
                .map(|(_, t)| *t)
        })
    }
}

impl Drop for CurrentThread {
    fn drop(&mut self) {
        CURRENT.with(|c| {
            c.borrow_mut().pop();
        });
    }
}

pub(crate) enum Backend {
    Virtual(Mutex<sim::Sim>),
    Real(threaded::Real),
}

#[derive(Clone)]
pub(crate) enum SerialRef {
    Virtual(usize),
    Real(Arc<threaded::RealSerial>),
}

#[derive(Clone)]
pub(crate) enum PoolRef {
    Virtual(usize),
    Real(Arc<threaded::RealPool>),
}

pub(crate) struct Inner {
    options: SessionOptions,
    clock: ClockSource,
    origin_ns: u64,
    sink: EventSink,
    main: ThreadIdentity,
    next_thread: AtomicU64,
    next_task: AtomicU64,
    closed: AtomicBool,
    registry: Mutex<HashMap<TaskKey, Arc<TaskControl>>>,
    callback_error: Mutex<Option<RuntimeError>>,
    services: Mutex<HashMap<String, SerialRef>>,
    facade_queue: Mutex<Option<SerialRef>>,
    backend: Backend,
}

/// Handle to a running session. Cheap to clone and usable from any thread.
#[derive(Clone)]
pub struct Runtime {
    inner: Arc<Inner>,
}

impl Runtime {
    fn new(options: SessionOptions) -> Runtime {
        let clock = options.clock.clone();
        let backend = match clock.mode() {
            ClockMode::Virtual => Backend::Virtual(Mutex::new(sim::Sim::default())),
            ClockMode::RealMonotonic => Backend::Real(threaded::Real::default()),
        };
        Runtime {
            inner: Arc::new(Inner {
                origin_ns: clock.now_ns(),
                sink: EventSink::new(options.emit_events),
                main: ThreadIdentity::main(MAIN_THREAD_ID),
                next_thread: AtomicU64::new(MAIN_THREAD_ID + 1),
                next_task: AtomicU64::new(1),
                closed: AtomicBool::new(false),
                registry: Mutex::new(HashMap::new()),
                callback_error: Mutex::new(None),
                services: Mutex::new(HashMap::new()),
                facade_queue: Mutex::new(None),
                clock,
                options,
                backend,
            }),
        }
    }

    pub fn main_thread(&self) -> ThreadIdentity {
        self.inner.main
    }

    pub fn clock(&self) -> &ClockSource {
        &self.inner.clock
    }

    /// Nanoseconds since the session started.
    pub fn now_ns(&self) -> u64 {
        self.inner.clock.now_ns() - self.inner.origin_ns
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }

    /// The thread the calling code is acting as (main outside task bodies).
    pub fn current_thread(&self) -> ThreadIdentity {
        CurrentThread::get(self.inner.sink.uid()).unwrap_or(self.inner.main)
    }

    /// Registers a thread that is not an offspring of the main thread, such as
    /// a framework-owned thread. Tasks it requests are not UI-triggered.
    pub fn system_thread(&self, name: &str) -> Result<ThreadIdentity, RuntimeError> {
        self.ensure_open()?;
        let t = ThreadIdentity::detached(self.new_thread_id());
        self.emit_spawn(t, None, name);
        Ok(t)
    }

    /// Starts `task` on a brand-new thread created by `requester`.
    #[track_caller]
    pub fn spawn_thread(
        &self,
        requester: ThreadIdentity,
        task: Task,
    ) -> Result<TaskKey, RuntimeError> {
        let site = task.site(Location::caller(), "spawn_thread");
        self.ensure_open()?;
        task.validate(self.inner.clock.mode())?;
        match &self.inner.backend {
            Backend::Virtual(_) => sim::spawn_thread(self, requester, task, site),
            Backend::Real(_) => threaded::spawn_thread(self, requester, task, site),
        }
    }

    /// Creates a serial executor whose single worker is started by `owner`.
    pub fn serial_queue(
        &self,
        owner: ThreadIdentity,
        mechanism: Mechanism,
        name: &str,
    ) -> Result<SerialQueue, RuntimeError> {
        if !matches!(
            mechanism,
            Mechanism::HandlerLooper
                | Mechanism::AsyncQuery
                | Mechanism::SerialService
                | Mechanism::AsyncFacade
        ) {
            return Err(RuntimeError::InvalidTask(
                "serial queues model looper, query, service or facade mechanisms",
            ));
        }
        self.ensure_open()?;
        let r = self.new_serial(owner, name);
        Ok(SerialQueue {
            rt: self.clone(),
            r,
            mechanism,
        })
    }

    fn new_serial(&self, owner: ThreadIdentity, name: &str) -> SerialRef {
        let worker = ThreadIdentity::child(self.new_thread_id(), owner.thread_id);
        self.emit_spawn(worker, None, name);
        match &self.inner.backend {
            Backend::Virtual(sim) => SerialRef::Virtual(sim.lock().unwrap().add_serial(worker)),
            Backend::Real(_) => SerialRef::Real(threaded::RealSerial::start(self, worker)),
        }
    }

    /// Creates a thread pool. Workers are created lazily by submitters.
    pub fn pool(&self, config: PoolConfig) -> Result<Pool, RuntimeError> {
        config.validate()?;
        self.ensure_open()?;
        let r = match &self.inner.backend {
            Backend::Virtual(sim) => PoolRef::Virtual(sim.lock().unwrap().add_pool(config)),
            Backend::Real(_) => PoolRef::Real(threaded::RealPool::new(config)),
        };
        Ok(Pool {
            rt: self.clone(),
            r,
            config,
        })
    }

    pub fn async_facade(&self) -> AsyncFacade {
        AsyncFacade { rt: self.clone() }
    }

    /// Registers a named service whose requests run serially on one worker.
    pub fn register_service(&self, owner: ThreadIdentity, name: &str) -> Result<(), RuntimeError> {
        self.ensure_open()?;
        let mut services = self.inner.services.lock().unwrap();
        if services.contains_key(name) {
            return Err(RuntimeError::DuplicateService(name.to_string()));
        }
        let r = self.new_serial(owner, &format!("service:{name}"));
        services.insert(name.to_string(), r);
        Ok(())
    }

    /// Sends `task` to the service registered as `service_name`.
    #[track_caller]
    pub fn dispatch_service(
        &self,
        service_name: &str,
        task: Task,
        requester: ThreadIdentity,
    ) -> Result<TaskKey, RuntimeError> {
        let site = task.site(Location::caller(), "dispatch_service");
        self.ensure_open()?;
        let r = self
            .inner
            .services
            .lock()
            .unwrap()
            .get(service_name)
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownService(service_name.to_string()))?;
        let key = TaskKey::from(format!(
            "{}#{}#{}",
            Mechanism::SerialService.tag(),
            service_name,
            self.next_task_number()
        ));
        self.submit_serial_ref(&r, Mechanism::SerialService, requester, task, site, key)
    }

    /// Requests cancellation of a task.
    pub fn cancel(&self, key: &TaskKey) -> Result<CancelOutcome, RuntimeError> {
        let control = self
            .inner
            .registry
            .lock()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownTask(key.clone()))?;
        match &self.inner.backend {
            Backend::Virtual(_) => sim::cancel(self, key, &control),
            Backend::Real(_) => Ok(threaded::cancel(self, key, &control)),
        }
    }

    /// Runs `f` on the main thread after `delay_ns`.
    pub fn after(
        &self,
        delay_ns: u64,
        f: impl FnOnce(&Runtime) -> Result<(), RuntimeError> + Send + 'static,
    ) -> Result<(), RuntimeError> {
        self.ensure_open()?;
        match &self.inner.backend {
            Backend::Virtual(_) => sim::after(self, delay_ns, Box::new(f)),
            Backend::Real(_) => threaded::after(self, delay_ns, Box::new(f)),
        }
        Ok(())
    }

    fn record_callback_error(&self, e: RuntimeError) {
        self.inner.callback_error.lock().unwrap().get_or_insert(e);
    }

    fn ensure_open(&self) -> Result<(), RuntimeError> {
        if self.is_closed() {
            Err(RuntimeError::SessionClosed)
        } else {
            Ok(())
        }
    }

    fn new_thread_id(&self) -> u64 {
        self.inner.next_thread.fetch_add(1, Ordering::Relaxed)
    }

    fn next_task_number(&self) -> u64 {
        self.inner.next_task.fetch_add(1, Ordering::Relaxed)
    }

    fn new_key(&self, mechanism: Mechanism) -> TaskKey {
        TaskKey::from(format!("{}#{}", mechanism.tag(), self.next_task_number()))
    }

    fn register(&self, key: &TaskKey, mechanism: Mechanism, task: &Task) -> Arc<TaskControl> {
        let control = TaskControl::new(task.cancellation_check(), mechanism);
        self.inner
            .registry
            .lock()
            .unwrap()
            .insert(key.clone(), control.clone());
        control
    }

    #[inline]
    fn emit(&self, event: TaskEvent) {
        self.inner.sink.emit(event);
    }

    fn emit_spawn(&self, thread: ThreadIdentity, key: Option<&TaskKey>, name: &str) {
        if !self.inner.sink.enabled() {
            return;
        }
        self.emit(TaskEvent {
            timestamp_ns: self.now_ns(),
            kind: EventKind::Spawn,
            mechanism: None,
            task_key: key.cloned(),
            thread,
            context: None,
            detail: Some(name.to_string()),
        });
    }

    fn emit_schedule(
        &self,
        mechanism: Mechanism,
        key: &TaskKey,
        requester: ThreadIdentity,
        site: &Site,
        label: &str,
    ) {
        if !self.inner.sink.enabled() {
            return;
        }
        self.emit(TaskEvent {
            timestamp_ns: self.now_ns(),
            kind: EventKind::Schedule,
            mechanism: Some(mechanism),
            task_key: Some(key.clone()),
            thread: requester,
            context: Some(context::capture(site)),
            detail: Some(label.to_string()),
        });
    }

    fn emit_task(
        &self,
        kind: EventKind,
        mechanism: Mechanism,
        key: &TaskKey,
        thread: ThreadIdentity,
        detail: Option<&str>,
    ) {
        if !self.inner.sink.enabled() {
            return;
        }
        self.emit(TaskEvent {
            timestamp_ns: self.now_ns(),
            kind,
            mechanism: Some(mechanism),
            task_key: Some(key.clone()),
            thread,
            context: None,
            detail: detail.map(str::to_string),
        });
    }

    fn submit_serial_ref(
        &self,
        r: &SerialRef,
        mechanism: Mechanism,
        requester: ThreadIdentity,
        task: Task,
        site: Site,
        key: TaskKey,
    ) -> Result<TaskKey, RuntimeError> {
        task.validate(self.inner.clock.mode())?;
        match r {
            SerialRef::Virtual(i) => {
                sim::submit_serial(self, *i, mechanism, requester, task, site, key)
            }
            SerialRef::Real(s) => {
                threaded::submit_serial(self, s, mechanism, requester, task, site, key)
            }
        }
    }

    fn submit_pool_ref(
        &self,
        r: &PoolRef,
        mechanism: Mechanism,
        requester: ThreadIdentity,
        task: Task,
        site: Site,
    ) -> Result<TaskKey, RuntimeError> {
        self.ensure_open()?;
        task.validate(self.inner.clock.mode())?;
        match r {
            PoolRef::Virtual(i) => sim::submit_pool(self, *i, mechanism, requester, task, site),
            PoolRef::Real(p) => threaded::submit_pool(self, p, mechanism, requester, task, site),
        }
    }

    fn snapshot(&self) -> TraceSession {
        TraceSession {
            session_id: self.inner.options.session_id.clone(),
            config_label: self.inner.options.config_label.clone(),
            clock_origin_ns: self.inner.origin_ns,
            events: self.inner.sink.take(),
        }
    }
}

impl fmt::Debug for Runtime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Runtime")
            .field("session_id", &self.inner.options.session_id)
            .field("clock", &self.inner.clock.mode())
            .finish_non_exhaustive()
    }
}

/// Single-worker FIFO executor (looper/handler, query handler, service).
#[derive(Clone)]
pub struct SerialQueue {
    rt: Runtime,
    r: SerialRef,
    mechanism: Mechanism,
}

impl SerialQueue {
    #[track_caller]
    pub fn submit(&self, requester: ThreadIdentity, task: Task) -> Result<TaskKey, RuntimeError> {
        let site = task.site(Location::caller(), "submit_serial");
        self.rt.ensure_open()?;
        let key = self.rt.new_key(self.mechanism);
        self.rt
            .submit_serial_ref(&self.r, self.mechanism, requester, task, site, key)
    }

    /// Stops accepting tasks; already queued tasks still run.
    pub fn quit(&self) {
        match &self.r {
            SerialRef::Virtual(i) => sim::quit_serial(&self.rt, *i),
            SerialRef::Real(s) => s.quit(),
        }
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }
}

/// Bounded pool of reusable workers with a pending FIFO.
#[derive(Clone)]
pub struct Pool {
    rt: Runtime,
    r: PoolRef,
    config: PoolConfig,
}

impl Pool {
    #[track_caller]
    pub fn submit(&self, requester: ThreadIdentity, task: Task) -> Result<TaskKey, RuntimeError> {
        let site = task.site(Location::caller(), "submit_pool");
        self.rt
            .submit_pool_ref(&self.r, Mechanism::PoolExecutor, requester, task, site)
    }

    /// Rejects further submissions; pending tasks still run.
    pub fn shutdown(&self) {
        match &self.r {
            PoolRef::Virtual(i) => sim::shutdown_pool(&self.rt, *i),
            PoolRef::Real(p) => p.shutdown(),
        }
    }

    pub fn config(&self) -> PoolConfig {
        self.config
    }
}

/// Task facade: `execute_default` serializes every task on one global queue,
/// `execute_on` targets an explicit pool.
#[derive(Clone)]
pub struct AsyncFacade {
    rt: Runtime,
}

impl AsyncFacade {
    #[track_caller]
    pub fn execute_default(
        &self,
        requester: ThreadIdentity,
        task: Task,
    ) -> Result<TaskKey, RuntimeError> {
        let site = task.site(Location::caller(), "execute_default");
        self.rt.ensure_open()?;
        let r = {
            let mut q = self.rt.inner.facade_queue.lock().unwrap();
            match &*q {
                Some(r) => r.clone(),
                None => {
                    let r = self.rt.new_serial(requester, "facade-serial");
                    *q = Some(r.clone());
                    r
                }
            }
        };
        let key = self.rt.new_key(Mechanism::AsyncFacade);
        self.rt
            .submit_serial_ref(&r, Mechanism::AsyncFacade, requester, task, site, key)
    }

    #[track_caller]
    pub fn execute_on(
        &self,
        pool: &Pool,
        requester: ThreadIdentity,
        task: Task,
    ) -> Result<TaskKey, RuntimeError> {
        let site = task.site(Location::caller(), "execute_on");
        self.rt
            .submit_pool_ref(&pool.r, Mechanism::AsyncFacade, requester, task, site)
    }
}
