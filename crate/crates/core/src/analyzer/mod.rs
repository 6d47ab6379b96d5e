//! Turns a trace into ranked, annotated task groups.
//!
//! Records requested outside the main thread's lineage are dropped, the rest
//! are grouped by execution context, summarized and checked against the
//! heuristics in [`HeuristicConfig`].

mod heuristics;
mod lineage;
mod stats;

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use heuristics::{
    detect_anomalies, suspiciousness, ConfigError, Evidence, Heuristic, HeuristicConfig, Metric,
    Warning,
};
pub use lineage::{build_lineage, filter_ui_triggered, LineageError, LineageSet};
pub use stats::{compute_stats, ratio_to_f64, GroupStats, MetricStats};

use crate::trace_model::{correlate, CorrelateError, ExecutionContext, TaskRecord, TraceSession};

/// Records sharing one execution context, in request order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextGroup {
    pub context: ExecutionContext,
    pub records: Vec<TaskRecord>,
}

/// Partitions records by their full frame list. Groups come out ordered by
/// their earliest request.
pub fn group_by_context(records: &[TaskRecord]) -> Vec<ContextGroup> {
    let mut index: HashMap<&ExecutionContext, usize> = HashMap::new();
    let mut groups: Vec<ContextGroup> = Vec::new();
    let mut sorted: Vec<&TaskRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (a.request_ns, &a.context, a.mechanism, &a.task_key).cmp(&(
            b.request_ns,
            &b.context,
            b.mechanism,
            &b.task_key,
        ))
    });
    for r in sorted {
        let i = *index.entry(&r.context).or_insert_with(|| {
            groups.push(ContextGroup {
                context: r.context.clone(),
                records: Vec::new(),
            });
            groups.len() - 1
        });
        groups[i].records.push(r.clone());
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAnalysis {
    /// Position of the group by earliest request within its session.
    pub context_index: usize,
    pub stats: GroupStats,
    pub warnings: Vec<Warning>,
    pub suspiciousness: f64,
    /// Complete queuing times, in request order.
    pub queuing_ns: Vec<u64>,
    /// Complete execution latencies, in request order.
    pub latency_ns: Vec<u64>,
}

impl GroupAnalysis {
    pub fn from_records(
        context_index: usize,
        records: &[TaskRecord],
        cfg: &HeuristicConfig,
    ) -> Self {
        let stats = compute_stats(records);
        let warnings = detect_anomalies(&stats, cfg);
        let complete = records.iter().filter(|r| r.is_complete());
        GroupAnalysis {
            context_index,
            suspiciousness: suspiciousness(&warnings),
            queuing_ns: complete
                .clone()
                .filter_map(TaskRecord::queuing_time)
                .collect(),
            latency_ns: complete.filter_map(TaskRecord::latency).collect(),
            stats,
            warnings,
        }
    }

    pub fn context(&self) -> &ExecutionContext {
        &self.stats.context
    }
}

/// Descending suspiciousness, then larger latency max, then context text.
pub fn rank_order(a: &GroupAnalysis, b: &GroupAnalysis) -> Ordering {
    let lat_max = |g: &GroupAnalysis| g.stats.latency.as_ref().map(|m| m.max);
    b.suspiciousness
        .total_cmp(&a.suspiciousness)
        .then_with(|| lat_max(b).cmp(&lat_max(a)))
        .then_with(|| a.context().joined().cmp(&b.context().joined()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAnalysis {
    pub session_id: String,
    pub config_label: String,
    /// Records dropped because they were requested outside the UI lineage.
    pub filtered_out: u64,
    /// Ranked most suspicious first.
    pub groups: Vec<GroupAnalysis>,
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Correlate(#[from] CorrelateError),
    #[error(transparent)]
    Lineage(#[from] LineageError),
}

pub fn analyze_session(
    session: &TraceSession,
    cfg: &HeuristicConfig,
) -> Result<SessionAnalysis, AnalysisError> {
    let records = correlate(&session.events)?;
    let total = records.len();
    let kept = if records.is_empty() {
        records
    } else {
        filter_ui_triggered(&records, &build_lineage(&session.events)?)
    };
    let filtered_out = (total - kept.len()) as u64;
    let mut groups: Vec<GroupAnalysis> = group_by_context(&kept)
        .iter()
        .enumerate()
        .map(|(i, g)| GroupAnalysis::from_records(i, &g.records, cfg))
        .collect();
    groups.sort_by(rank_order);
    Ok(SessionAnalysis {
        session_id: session.session_id.clone(),
        config_label: session.config_label.clone(),
        filtered_out,
        groups,
    })
}
