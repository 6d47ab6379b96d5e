use std::collections::{BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::trace_model::{EventKind, TaskEvent, TaskRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LineageError {
    #[error("trace has no main thread")]
    NoMainThread,
    #[error("trace has more than one main thread ({0:?})")]
    MultipleMainThreads(Vec<u64>),
}

/// The main thread plus every thread it transitively spawned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineageSet {
    pub main: u64,
    pub offspring: BTreeSet<u64>,
}

impl LineageSet {
    pub fn contains(&self, thread_id: u64) -> bool {
        self.offspring.contains(&thread_id)
    }
}

/// Breadth-first closure over `Spawn` edges, rooted at the thread marked as
/// main.
pub fn build_lineage(events: &[TaskEvent]) -> Result<LineageSet, LineageError> {
    let mains: BTreeSet<u64> = events
        .iter()
        .filter(|e| e.thread.is_main)
        .map(|e| e.thread.thread_id)
        .collect();
    let main = match mains.len() {
        0 => return Err(LineageError::NoMainThread),
        1 => *mains.iter().next().unwrap(),
        _ => {
            return Err(LineageError::MultipleMainThreads(
                mains.into_iter().collect(),
            ))
        }
    };

    let mut children: HashMap<u64, Vec<u64>> = HashMap::new();
    for e in events.iter().filter(|e| e.kind == EventKind::Spawn) {
        if let Some(parent) = e.thread.parent_thread_id {
            children.entry(parent).or_default().push(e.thread.thread_id);
        }
    }

    let mut offspring = BTreeSet::from([main]);
    let mut queue = VecDeque::from([main]);
    while let Some(t) = queue.pop_front() {
        for &c in children.get(&t).into_iter().flatten() {
            if offspring.insert(c) {
                queue.push_back(c);
            }
        }
    }
    Ok(LineageSet { main, offspring })
}

/// Keeps the records requested from the main thread or one of its offspring.
pub fn filter_ui_triggered(records: &[TaskRecord], lineage: &LineageSet) -> Vec<TaskRecord> {
    records
        .iter()
        .filter(|r| lineage.contains(r.requested_by.thread_id))
        .cloned()
        .collect()
}
