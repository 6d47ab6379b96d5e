//! Profiling toolkit for asynchronous task execution.
//!
//! The crate covers the whole pipeline: an instrumented [`runtime`] that
//! records schedule/start/end events for six asynchronous mechanisms, a
//! line-based [`tracelog`] codec, the [`analyzer`] that filters, groups and
//! flags suspicious task groups, [`report`] rendering, and deterministic
//! [`scenarios`] reproducing common defects.

pub mod analyzer;
pub mod report;
pub mod runtime;
pub mod scenarios;
pub mod trace_model;
pub mod tracelog;

pub use trace_model::{
    correlate, latency, queuing_time, CorrelateError, EventKind, ExecutionContext, Mechanism,
    MechanismFamily, TaskEvent, TaskKey, TaskRecord, ThreadIdentity, TraceSession,
};
