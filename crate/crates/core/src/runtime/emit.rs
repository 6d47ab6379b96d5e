//! Per-thread event buffers merged at drain.
//!
//! Every emitting thread appends to its own buffer; the only shared write on
//! the hot path is the sequence counter. Drain merges all buffers by
//! `(timestamp, sequence)`.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::trace_model::TaskEvent;

const CHUNK: usize = 4096;

// Fixed-size chunks, so growing never copies what is already recorded.
#[derive(Default)]
struct Run {
    chunks: Vec<Vec<(u64, TaskEvent)>>,
}

type Buffer = Arc<Mutex<Run>>;

thread_local! {
    static LOCAL: RefCell<Vec<(u64, Buffer)>> =
        const { RefCell::new(Vec::new()) };
}

static NEXT_SINK: AtomicU64 = AtomicU64::new(1);

pub(crate) struct EventSink {
    uid: u64,
    enabled: bool,
    seq: AtomicU64,
    buffers: Mutex<Vec<Buffer>>,
}

impl EventSink {
    pub(crate) fn new(enabled: bool) -> Self {
        EventSink {
            uid: NEXT_SINK.fetch_add(1, Ordering::Relaxed),
            enabled,
            seq: AtomicU64::new(0),
            buffers: Mutex::new(Vec::new()),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub(crate) fn enabled(&self) -> bool {
        self.enabled
    }

    #[inline]
    pub(crate) fn emit(&self, event: TaskEvent) {
        if !self.enabled {
            return;
        }
        let seq = self.seq.fetch_add(1, Ordering::Relaxed);
        LOCAL.with(|local| {
            let mut local = local.borrow_mut();
            match local.first() {
                Some((uid, buf)) if *uid == self.uid => buf.lock().unwrap().push(seq, event),
                _ => self
                    .local_buffer(&mut local)
                    .lock()
                    .unwrap()
                    .push(seq, event),
            }
        })
    }

    // Moves this sink's buffer to the front of the thread's list, creating it
    // on first use. Buffers of finished sinks are dropped along the way.
    fn local_buffer<'a>(&self, local: &'a mut Vec<(u64, Buffer)>) -> &'a Buffer {
        local.retain(|(uid, b)| *uid == self.uid || Arc::strong_count(b) > 1);
        match local.iter().position(|(uid, _)| *uid == self.uid) {
            Some(i) => local.swap(0, i),
            None => {
                let buf: Buffer = Arc::default();
                self.buffers.lock().unwrap().push(buf.clone());
                local.insert(0, (self.uid, buf));
            }
        }
        &local[0].1
    }

    /// Takes every event emitted so far, ordered by `(timestamp, sequence)`.
    pub(crate) fn take(&self) -> Vec<TaskEvent> {
        let runs: Vec<Run> = self
            .buffers
            .lock()
            .unwrap()
            .iter()
            .map(|b| std::mem::take(&mut *b.lock().unwrap()))
            .filter(|r| !r.chunks.is_empty())
            .collect();
        let total = runs.iter().map(Run::len).sum();
        let mut out = Vec::with_capacity(total);
        let mut heap = BinaryHeap::new();
        let mut iters: Vec<_> = runs
            .into_iter()
            .enumerate()
            .map(|(i, run)| {
                let mut it = run.into_sorted();
                let (seq, ev) = it.next().unwrap();
                heap.push(Reverse((ev.timestamp_ns, seq, i)));
                (Some(ev), it)
            })
            .collect();
        while let Some(Reverse((_, _, i))) = heap.pop() {
            let (head, it) = &mut iters[i];
            out.push(head.take().unwrap());
            if let Some((seq, ev)) = it.next() {
                heap.push(Reverse((ev.timestamp_ns, seq, i)));
                *head = Some(ev);
            }
        }
        out
    }
}

impl Run {
    #[inline]
    fn push(&mut self, seq: u64, event: TaskEvent) {
        match self.chunks.last_mut() {
            Some(c) if c.len() < CHUNK => c.push((seq, event)),
            _ => {
                let mut c = Vec::with_capacity(CHUNK);
                c.push((seq, event));
                self.chunks.push(c);
            }
        }
    }

    fn len(&self) -> usize {
        self.chunks.iter().map(Vec::len).sum()
    }

    // A thread's own events are normally in order already.
    fn into_sorted(self) -> Box<dyn Iterator<Item = (u64, TaskEvent)>> {
        let key = |(seq, ev): &(u64, TaskEvent)| (ev.timestamp_ns, *seq);
        let mut prev = None;
        let sorted = self.chunks.iter().flatten().all(|e| {
            let k = key(e);
            prev.replace(k).is_none_or(|p| p <= k)
        });
        let flat = self.chunks.into_iter().flatten();
        if sorted {
            Box::new(flat)
        } else {
            let mut all: Vec<_> = flat.collect();
            all.sort_by_key(key);
            Box::new(all.into_iter())
        }
    }
}
