//! Event, record and context vocabulary shared by the runtime, the trace log
//! codec and the analyzer, plus correlation of raw lifecycle events into
//! per-task records.
//!
//! A task goes through `Schedule -> Start -> End`, or is closed early by a
//! `Cancel`. The two derived quantities the rest of the crate cares about are
//! the queuing time (`start - request`) and the execution latency
//! (`end - start`).

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The six asynchronous execution mechanisms the runtime models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mechanism {
    /// A freshly created thread per task.
    NewThread,
    /// A looper with a single worker thread fed through a handler.
    HandlerLooper,
    /// Query handler backed by a looper.
    AsyncQuery,
    /// Pool of reusable worker threads with a pending FIFO.
    PoolExecutor,
    /// Task facade with a global serial default path and an explicit pool path.
    AsyncFacade,
    /// Named service whose requests are serialized on one worker.
    SerialService,
}

/// How the worker threads behind a [`Mechanism`] are managed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MechanismFamily {
    NonReusable,
    LooperHandler,
    PoolBased,
}

impl Mechanism {
    pub const ALL: [Mechanism; 6] = [
        Mechanism::NewThread,
        Mechanism::HandlerLooper,
        Mechanism::AsyncQuery,
        Mechanism::PoolExecutor,
        Mechanism::AsyncFacade,
        Mechanism::SerialService,
    ];

    pub fn family(self) -> MechanismFamily {
        match self {
            Mechanism::NewThread => MechanismFamily::NonReusable,
            Mechanism::HandlerLooper | Mechanism::AsyncQuery | Mechanism::SerialService => {
                MechanismFamily::LooperHandler
            }
            Mechanism::PoolExecutor | Mechanism::AsyncFacade => MechanismFamily::PoolBased,
        }
    }

    /// Short tag used in task keys and in the trace log.
    pub fn tag(self) -> &'static str {
        match self {
            Mechanism::NewThread => "THREAD",
            Mechanism::HandlerLooper => "LOOPER",
            Mechanism::AsyncQuery => "AQUERY",
            Mechanism::PoolExecutor => "POOL",
            Mechanism::AsyncFacade => "AFACADE",
            Mechanism::SerialService => "SERVICE",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Mechanism> {
        Mechanism::ALL.into_iter().find(|m| m.tag() == tag)
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Identity of a (real or simulated) thread within one trace session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreadIdentity {
    pub thread_id: u64,
    pub parent_thread_id: Option<u64>,
    pub is_main: bool,
}

impl ThreadIdentity {
    pub fn main(thread_id: u64) -> Self {
        ThreadIdentity {
            thread_id,
            parent_thread_id: None,
            is_main: true,
        }
    }

    pub fn child(thread_id: u64, parent: u64) -> Self {
        ThreadIdentity {
            thread_id,
            parent_thread_id: Some(parent),
            is_main: false,
        }
    }

    /// A thread with no recorded creator (framework/system thread).
    pub fn detached(thread_id: u64) -> Self {
        ThreadIdentity {
            thread_id,
            parent_thread_id: None,
            is_main: false,
        }
    }
}

/// Formats one call frame as `unit:symbol:line`. A line of 0 means unknown.
pub fn frame(unit: &str, symbol: &str, line: u32) -> String {
    format!("{unit}:{symbol}:{line}")
}

/// Stable FNV-1a digest over a frame list. Frames are separated by 0xFF,
/// which never occurs in UTF-8.
pub fn fingerprint_frames<S: AsRef<str>>(frames: &[S]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for f in frames {
        for &b in f.as_ref().as_bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(PRIME);
        }
        hash ^= 0xff;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Call frames captured at the submission site, innermost first.
///
/// Equality, ordering and grouping use the full frame list; the fingerprint is
/// only an index accelerator.
#[derive(Clone, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct ExecutionContext {
    frames: Arc<[String]>,
    fingerprint: u64,
}

impl ExecutionContext {
    pub fn new(frames: Vec<String>) -> Self {
        let fingerprint = fingerprint_frames(&frames);
        ExecutionContext {
            frames: frames.into(),
            fingerprint,
        }
    }

    /// Drops frames whose unit (everything before `:symbol:line`) starts with
    /// one of `internal_prefixes`, then keeps at most `max_depth` frames.
    pub fn normalized<I, S>(frames: I, internal_prefixes: &[&str], max_depth: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let kept: Vec<String> = frames
            .into_iter()
            .map(Into::into)
            .filter(|f| {
                let unit = f.rsplitn(3, ':').nth(2).unwrap_or(f);
                !internal_prefixes.iter().any(|p| unit.starts_with(p))
            })
            .take(max_depth)
            .collect();
        ExecutionContext::new(kept)
    }

    pub fn frames(&self) -> &[String] {
        &self.frames
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames joined by `;`, used for display and tie-breaking.
    pub fn joined(&self) -> String {
        self.frames.join(";")
    }
}

impl From<Vec<String>> for ExecutionContext {
    fn from(frames: Vec<String>) -> Self {
        ExecutionContext::new(frames)
    }
}

impl From<ExecutionContext> for Vec<String> {
    fn from(ctx: ExecutionContext) -> Self {
        ctx.frames.to_vec()
    }
}

impl PartialEq for ExecutionContext {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint && self.frames == other.frames
    }
}

impl Eq for ExecutionContext {}

impl std::hash::Hash for ExecutionContext {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.frames.hash(state);
    }
}

impl PartialOrd for ExecutionContext {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExecutionContext {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.frames.cmp(&other.frames)
    }
}

impl fmt::Debug for ExecutionContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.frames.iter()).finish()
    }
}

/// Correlation key of a task, unique within its mechanism.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct TaskKey(Arc<str>);

impl TaskKey {
    pub fn new(key: impl AsRef<str>) -> Self {
        TaskKey(Arc::from(key.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for TaskKey {
    fn from(s: String) -> Self {
        TaskKey(Arc::from(s))
    }
}

impl From<&str> for TaskKey {
    fn from(s: &str) -> Self {
        TaskKey::new(s)
    }
}

impl From<TaskKey> for String {
    fn from(k: TaskKey) -> Self {
        k.0.to_string()
    }
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Spawn,
    Schedule,
    Start,
    End,
    Cancel,
}

impl EventKind {
    // Ordering among events sharing a timestamp.
    fn rank(self) -> u8 {
        match self {
            EventKind::Spawn => 0,
            EventKind::Schedule => 1,
            EventKind::Start => 2,
            EventKind::End | EventKind::Cancel => 3,
        }
    }
}

/// One timestamped lifecycle event.
///
/// For `Spawn`, `thread` is the newly created thread (its parent is the
/// creator). For every other kind it is the thread the event happened on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub timestamp_ns: u64,
    pub kind: EventKind,
    pub mechanism: Option<Mechanism>,
    pub task_key: Option<TaskKey>,
    pub thread: ThreadIdentity,
    pub context: Option<ExecutionContext>,
    pub detail: Option<String>,
}

/// A correlated task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_key: TaskKey,
    pub mechanism: Mechanism,
    pub context: ExecutionContext,
    pub requested_by: ThreadIdentity,
    pub executed_on: Option<ThreadIdentity>,
    pub request_ns: u64,
    pub start_ns: Option<u64>,
    pub end_ns: Option<u64>,
    pub cancelled: bool,
    pub label: Option<String>,
}

impl TaskRecord {
    pub fn queuing_time(&self) -> Option<u64> {
        queuing_time(self)
    }

    pub fn latency(&self) -> Option<u64> {
        latency(self)
    }

    /// Started and closed (by End or by a Cancel observed while running).
    pub fn is_complete(&self) -> bool {
        self.start_ns.is_some() && self.end_ns.is_some()
    }
}

/// Time between scheduling and start; absent if the task never started.
pub fn queuing_time(record: &TaskRecord) -> Option<u64> {
    record
        .start_ns
        .map(|start| start.saturating_sub(record.request_ns))
}

/// Time between start and end; absent unless both are present.
pub fn latency(record: &TaskRecord) -> Option<u64> {
    match (record.start_ns, record.end_ns) {
        (Some(start), Some(end)) => Some(end.saturating_sub(start)),
        _ => None,
    }
}

/// One recorded run of a workload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSession {
    pub session_id: String,
    pub config_label: String,
    pub clock_origin_ns: u64,
    pub events: Vec<TaskEvent>,
}

impl TraceSession {
    pub fn new(session_id: impl Into<String>, config_label: impl Into<String>) -> Self {
        TraceSession {
            session_id: session_id.into(),
            config_label: config_label.into(),
            clock_origin_ns: 0,
            events: Vec::new(),
        }
    }

    pub fn correlate(&self) -> Result<Vec<TaskRecord>, CorrelateError> {
        correlate(&self.events)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorrelateError {
    #[error("event {index}: {kind:?} for task {key} without an open Schedule")]
    DanglingEvent {
        index: usize,
        kind: EventKind,
        key: TaskKey,
    },
    #[error("event {index}: task {key} scheduled again while still open")]
    DuplicateSchedule { index: usize, key: TaskKey },
    #[error("event {index}: task {key}: {reason}")]
    OrderViolation {
        index: usize,
        key: TaskKey,
        reason: &'static str,
    },
    #[error("event {index}: {reason}")]
    MalformedEvent { index: usize, reason: &'static str },
}

/// Pairs Schedule/Start/End/Cancel events into task records.
///
/// Events are processed in `(timestamp, kind)` order, so any interleaving that
/// keeps each thread's own order produces the same records. The output is
/// sorted by `(request_ns, mechanism, task_key)`. A key may be scheduled again
/// once its previous instance has closed.
pub fn correlate(events: &[TaskEvent]) -> Result<Vec<TaskRecord>, CorrelateError> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| (events[i].timestamp_ns, events[i].kind.rank()));

    let mut records: Vec<TaskRecord> = Vec::new();
    let mut open: HashMap<(Mechanism, TaskKey), usize> = HashMap::new();

    for index in order {
        let ev = &events[index];
        if ev.kind == EventKind::Spawn {
            continue;
        }
        let mechanism = ev.mechanism.ok_or(CorrelateError::MalformedEvent {
            index,
            reason: "task event without mechanism",
        })?;
        let key = ev.task_key.clone().ok_or(CorrelateError::MalformedEvent {
            index,
            reason: "task event without task key",
        })?;
        let slot = (mechanism, key);

        if ev.kind == EventKind::Schedule {
            let context = ev.context.clone().ok_or(CorrelateError::MalformedEvent {
                index,
                reason: "Schedule without execution context",
            })?;
            if open.contains_key(&slot) {
                return Err(CorrelateError::DuplicateSchedule { index, key: slot.1 });
            }
            records.push(TaskRecord {
                task_key: slot.1.clone(),
                mechanism,
                context,
                requested_by: ev.thread,
                executed_on: None,
                request_ns: ev.timestamp_ns,
                start_ns: None,
                end_ns: None,
                cancelled: false,
                label: ev.detail.clone(),
            });
            open.insert(slot, records.len() - 1);
            continue;
        }

        let Some(&ri) = open.get(&slot) else {
            return Err(CorrelateError::DanglingEvent {
                index,
                kind: ev.kind,
                key: slot.1,
            });
        };
        let rec = &mut records[ri];
        match ev.kind {
            EventKind::Start => {
                if rec.start_ns.is_some() {
                    return Err(CorrelateError::OrderViolation {
                        index,
                        key: slot.1,
                        reason: "started twice",
                    });
                }
                rec.start_ns = Some(ev.timestamp_ns);
                rec.executed_on = Some(ev.thread);
            }
            EventKind::End => {
                if rec.start_ns.is_none() {
                    return Err(CorrelateError::OrderViolation {
                        index,
                        key: slot.1,
                        reason: "End before Start",
                    });
                }
                rec.end_ns = Some(ev.timestamp_ns);
                open.remove(&slot);
            }
            EventKind::Cancel => {
                rec.cancelled = true;
                if rec.start_ns.is_some() {
                    rec.end_ns = Some(ev.timestamp_ns);
                }
                open.remove(&slot);
            }
            EventKind::Spawn | EventKind::Schedule => unreachable!(),
        }
    }

    records.sort_by(|a, b| {
        (a.request_ns, a.mechanism, &a.task_key).cmp(&(b.request_ns, b.mechanism, &b.task_key))
    });
    Ok(records)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn main_thread() -> ThreadIdentity {
        ThreadIdentity::main(1)
    }

    pub fn worker(id: u64) -> ThreadIdentity {
        ThreadIdentity::child(id, 1)
    }

    pub fn ev(kind: EventKind, key: &str, t: u64, thread: ThreadIdentity) -> TaskEvent {
        TaskEvent {
            timestamp_ns: t,
            kind,
            mechanism: Some(Mechanism::PoolExecutor),
            task_key: Some(TaskKey::new(key)),
            thread,
            context: (kind == EventKind::Schedule)
                .then(|| ExecutionContext::new(vec![frame("app", "onClick", 7)])),
            detail: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use EventKind::*;

    #[test]
    fn family_follows_tag() {
        use Mechanism::*;
        assert_eq!(NewThread.family(), MechanismFamily::NonReusable);
        for m in [HandlerLooper, AsyncQuery, SerialService] {
            assert_eq!(m.family(), MechanismFamily::LooperHandler);
        }
        for m in [PoolExecutor, AsyncFacade] {
            assert_eq!(m.family(), MechanismFamily::PoolBased);
        }
        for m in Mechanism::ALL {
            assert_eq!(Mechanism::from_tag(m.tag()), Some(m));
        }
    }

    #[test]
    fn single_task_record() {
        let m = main_thread();
        let w = worker(2);
        let recs = correlate(&[
            ev(Schedule, "a", 100, m),
            ev(Start, "a", 150, w),
            ev(End, "a", 400, w),
        ])
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].request_ns, 100);
        assert_eq!(recs[0].queuing_time(), Some(50));
        assert_eq!(recs[0].latency(), Some(250));
        assert_eq!(recs[0].executed_on, Some(w));
    }

    #[test]
    fn interleaved_keys_resolve() {
        let m = main_thread();
        let (w2, w3) = (worker(2), worker(3));
        let recs = correlate(&[
            ev(Schedule, "a", 0, m),
            ev(Schedule, "b", 0, m),
            ev(Start, "b", 10, w3),
            ev(Start, "a", 20, w2),
            ev(End, "b", 30, w3),
            ev(End, "a", 40, w2),
        ])
        .unwrap();
        let a = recs.iter().find(|r| r.task_key.as_str() == "a").unwrap();
        let b = recs.iter().find(|r| r.task_key.as_str() == "b").unwrap();
        assert_eq!(a.queuing_time(), Some(20));
        assert_eq!(b.queuing_time(), Some(10));
    }

    #[test]
    fn start_without_schedule_is_dangling() {
        let err = correlate(&[ev(Start, "z", 5, worker(2))]).unwrap_err();
        assert!(matches!(
            err,
            CorrelateError::DanglingEvent { kind: Start, .. }
        ));
    }

    #[test]
    fn duplicate_open_schedule_rejected() {
        let m = main_thread();
        let err = correlate(&[ev(Schedule, "a", 0, m), ev(Schedule, "a", 1, m)]).unwrap_err();
        assert!(matches!(err, CorrelateError::DuplicateSchedule { .. }));
    }

    #[test]
    fn key_reused_after_completion() {
        let m = main_thread();
        let w = worker(2);
        let recs = correlate(&[
            ev(Schedule, "a", 0, m),
            ev(Start, "a", 1, w),
            ev(End, "a", 2, w),
            ev(Schedule, "a", 3, m),
            ev(Start, "a", 5, w),
            ev(End, "a", 9, w),
        ])
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].queuing_time(), Some(2));
    }

    #[test]
    fn end_before_start_is_order_violation() {
        let m = main_thread();
        let err = correlate(&[ev(Schedule, "a", 0, m), ev(End, "a", 3, worker(2))]).unwrap_err();
        assert!(matches!(err, CorrelateError::OrderViolation { .. }));
    }

    #[test]
    fn cancel_before_and_after_start() {
        let m = main_thread();
        let w = worker(2);
        let recs = correlate(&[
            ev(Schedule, "q", 0, m),
            ev(Schedule, "r", 0, m),
            ev(Start, "r", 0, w),
            ev(Cancel, "q", 4, m),
            ev(Cancel, "r", 6, w),
        ])
        .unwrap();
        let q = recs.iter().find(|r| r.task_key.as_str() == "q").unwrap();
        let r = recs.iter().find(|r| r.task_key.as_str() == "r").unwrap();
        assert!(q.cancelled && q.start_ns.is_none() && q.end_ns.is_none());
        assert!(!q.is_complete());
        assert!(r.cancelled && r.is_complete());
        assert_eq!(r.latency(), Some(6));
    }

    #[test]
    fn equal_timestamps_across_threads_are_ordered_by_kind() {
        let m = main_thread();
        let w = worker(2);
        // worker events listed first although they share the timestamp
        let recs = correlate(&[
            ev(Start, "a", 7, w),
            ev(End, "a", 7, w),
            ev(Schedule, "a", 7, m),
        ])
        .unwrap();
        assert_eq!(recs[0].queuing_time(), Some(0));
        assert_eq!(recs[0].latency(), Some(0));
    }

    fn rec(request: u64, start: Option<u64>, end: Option<u64>) -> TaskRecord {
        TaskRecord {
            task_key: TaskKey::new("k"),
            mechanism: Mechanism::NewThread,
            context: ExecutionContext::new(vec!["a:b:1".into()]),
            requested_by: main_thread(),
            executed_on: None,
            request_ns: request,
            start_ns: start,
            end_ns: end,
            cancelled: false,
            label: None,
        }
    }

    #[test]
    fn queuing_and_latency_edges() {
        assert_eq!(queuing_time(&rec(100, Some(100), None)), Some(0));
        assert_eq!(
            queuing_time(&rec(0, Some(3_000_000_000), None)),
            Some(3_000_000_000)
        );
        assert_eq!(queuing_time(&rec(0, None, None)), None);
        assert_eq!(latency(&rec(0, Some(10), Some(10))), Some(0));
        assert_eq!(
            latency(&rec(0, Some(0), Some(10_000_000_000))),
            Some(10_000_000_000)
        );
        assert_eq!(latency(&rec(0, Some(5), None)), None);
    }

    #[test]
    fn normalization_strips_internal_units() {
        let ctx = ExecutionContext::normalized(
            [
                "asyncscope::runtime:submit:0",
                "app:onClick:12",
                "app:main:3",
            ],
            &["asyncscope::"],
            32,
        );
        assert_eq!(ctx.frames(), ["app:onClick:12", "app:main:3"]);
        let deep = ExecutionContext::normalized((0..40).map(|i| format!("u:f:{i}")), &[], 32);
        assert_eq!(deep.frames().len(), 32);
        assert_eq!(deep.frames()[0], "u:f:0");
    }

    #[test]
    fn fingerprint_is_deterministic_and_separates_boundaries() {
        let a = ExecutionContext::new(vec!["ab".into(), "c".into()]);
        let b = ExecutionContext::new(vec!["a".into(), "bc".into()]);
        let a2 = ExecutionContext::new(vec!["ab".into(), "c".into()]);
        assert_eq!(a.fingerprint(), a2.fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a, b);
    }
}
