//! Real-clock backend on OS threads.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::context::{self, Site};
use super::sim::Callback;
use super::{
    Backend, CancelOutcome, CurrentThread, PoolConfig, Runtime, RuntimeError, Task, TaskBody,
    TaskContext, TaskControl, Work, CANCELLED, CANCEL_REQUESTED, DONE, QUEUED, RUNNING,
};
use crate::trace_model::{EventKind, Mechanism, TaskKey, ThreadIdentity};

#[derive(Default)]
pub(crate) struct Real {
    handles: Mutex<Vec<JoinHandle<()>>>,
    serials: Mutex<Vec<Arc<RealSerial>>>,
    pools: Mutex<Vec<Arc<RealPool>>>,
    outstanding: AtomicUsize,
    idle_lock: Mutex<()>,
    idle_cv: Condvar,
}

fn real(rt: &Runtime) -> &Real {
    match &rt.inner.backend {
        Backend::Real(r) => r,
        Backend::Virtual(_) => unreachable!("real operation on a virtual-clock runtime"),
    }
}

impl Real {
    fn begin(&self) {
        self.outstanding.fetch_add(1, Ordering::AcqRel);
    }

    fn finish(&self) {
        if self.outstanding.fetch_sub(1, Ordering::AcqRel) == 1 {
            let _g = self.idle_lock.lock().unwrap();
            self.idle_cv.notify_all();
        }
    }
}

pub(crate) struct Job {
    key: TaskKey,
    mechanism: Mechanism,
    control: Arc<TaskControl>,
    body: Option<TaskBody>,
    work: Work,
    poll_ns: Option<u64>,
}

impl Job {
    fn new(key: TaskKey, mechanism: Mechanism, control: Arc<TaskControl>, task: Task) -> Job {
        Job {
            key,
            mechanism,
            control,
            body: task.body,
            work: task.work,
            poll_ns: task.cancel_poll_ns,
        }
    }
}

// Sleeps for `total` (or forever), waking every `poll` to check for
// cancellation or session shutdown.
fn simulate_work(rt: &Runtime, job: &Job, total: Option<Duration>) {
    let poll = Duration::from_nanos(job.poll_ns.unwrap_or(super::DEFAULT_CANCEL_POLL_NS));
    let deadline = total.map(|d| Instant::now() + d);
    loop {
        if job.poll_ns.is_some() && job.control.cancel_requested() {
            return;
        }
        if deadline.is_none() && rt.is_closed() {
            return;
        }
        let remaining = match deadline {
            Some(d) => match d.checked_duration_since(Instant::now()) {
                Some(r) if !r.is_zero() => r,
                _ => return,
            },
            None => poll,
        };
        let step = if job.poll_ns.is_some() || deadline.is_none() {
            remaining.min(poll)
        } else {
            remaining
        };
        std::thread::sleep(step);
    }
}

fn run_job(rt: &Runtime, mut job: Job, worker: ThreadIdentity) {
    if !job.control.transition(QUEUED, RUNNING) {
        return;
    }
    rt.emit_task(EventKind::Start, job.mechanism, &job.key, worker, None);
    let _current = CurrentThread::enter(rt.inner.sink.uid(), worker);
    if let Some(body) = job.body.take() {
        let saved = context::swap_frames(Vec::new());
        let ctx = TaskContext {
            runtime: rt.clone(),
            thread: worker,
            key: job.key.clone(),
            control: job.control.clone(),
        };
        body(&ctx);
        context::swap_frames(saved);
    }
    match job.work {
        Work::Unspecified => {}
        Work::Finite(ns) => simulate_work(rt, &job, Some(Duration::from_nanos(ns))),
        Work::Forever => simulate_work(rt, &job, None),
    }
    if job.control.transition(RUNNING, DONE) {
        rt.emit_task(EventKind::End, job.mechanism, &job.key, worker, None);
    } else {
        job.control.state.store(CANCELLED, Ordering::Release);
        rt.emit_task(
            EventKind::Cancel,
            job.mechanism,
            &job.key,
            worker,
            Some("cancellation observed"),
        );
    }
    real(rt).finish();
}

pub(crate) fn spawn_thread(
    rt: &Runtime,
    requester: ThreadIdentity,
    task: Task,
    site: Site,
) -> Result<TaskKey, RuntimeError> {
    let key = rt.new_key(Mechanism::NewThread);
    let control = rt.register(&key, Mechanism::NewThread, &task);
    let thread = ThreadIdentity::child(rt.new_thread_id(), requester.thread_id);
    real(rt).begin();
    rt.emit_schedule(Mechanism::NewThread, &key, requester, &site, &task.label);
    rt.emit_spawn(thread, Some(&key), &task.label);
    let job = Job::new(key.clone(), Mechanism::NewThread, control, task);
    let rt2 = rt.clone();
    let handle = std::thread::spawn(move || run_job(&rt2, job, thread));
    real(rt).handles.lock().unwrap().push(handle);
    Ok(key)
}

struct SerialState {
    queue: VecDeque<Job>,
    quit: bool,
}

pub(crate) struct RealSerial {
    state: Mutex<SerialState>,
    cv: Condvar,
}

impl RealSerial {
    pub(crate) fn start(rt: &Runtime, worker: ThreadIdentity) -> Arc<RealSerial> {
        let serial = Arc::new(RealSerial {
            state: Mutex::new(SerialState {
                queue: VecDeque::new(),
                quit: false,
            }),
            cv: Condvar::new(),
        });
        let (rt2, s2) = (rt.clone(), serial.clone());
        let handle = std::thread::spawn(move || loop {
            let job = {
                let mut st = s2.state.lock().unwrap();
                loop {
                    if let Some(job) = st.queue.pop_front() {
                        break Some(job);
                    }
                    if st.quit {
                        break None;
                    }
                    st = s2.cv.wait(st).unwrap();
                }
            };
            match job {
                Some(job) => run_job(&rt2, job, worker),
                None => return,
            }
        });
        let r = real(rt);
        r.handles.lock().unwrap().push(handle);
        r.serials.lock().unwrap().push(serial.clone());
        serial
    }

    pub(crate) fn quit(&self) {
        self.state.lock().unwrap().quit = true;
        self.cv.notify_all();
    }
}

pub(crate) fn submit_serial(
    rt: &Runtime,
    serial: &Arc<RealSerial>,
    mechanism: Mechanism,
    requester: ThreadIdentity,
    task: Task,
    site: Site,
    key: TaskKey,
) -> Result<TaskKey, RuntimeError> {
    let mut st = serial.state.lock().unwrap();
    if st.quit {
        return Err(RuntimeError::WorkerDead);
    }
    let control = rt.register(&key, mechanism, &task);
    real(rt).begin();
    rt.emit_schedule(mechanism, &key, requester, &site, &task.label);
    st.queue
        .push_back(Job::new(key.clone(), mechanism, control, task));
    drop(st);
    serial.cv.notify_one();
    Ok(key)
}

struct PoolState {
    pending: VecDeque<Job>,
    idle: usize,
    alive: usize,
    spawned: usize,
    shutdown: bool,
}

pub(crate) struct RealPool {
    config: PoolConfig,
    state: Mutex<PoolState>,
    cv: Condvar,
    index: usize,
}

impl RealPool {
    pub(crate) fn new(config: PoolConfig) -> Arc<RealPool> {
        static NEXT: AtomicUsize = AtomicUsize::new(1);
        Arc::new(RealPool {
            config,
            state: Mutex::new(PoolState {
                pending: VecDeque::new(),
                idle: 0,
                alive: 0,
                spawned: 0,
                shutdown: false,
            }),
            cv: Condvar::new(),
            index: NEXT.fetch_add(1, Ordering::Relaxed),
        })
    }

    pub(crate) fn shutdown(&self) {
        self.state.lock().unwrap().shutdown = true;
        self.cv.notify_all();
    }

    fn worker_loop(self: &Arc<Self>, rt: &Runtime, first: Job, thread: ThreadIdentity) {
        run_job(rt, first, thread);
        let keep_alive = Duration::from_nanos(self.config.keep_alive_ns);
        loop {
            let job = {
                let mut st = self.state.lock().unwrap();
                loop {
                    if let Some(job) = st.pending.pop_front() {
                        break Some(job);
                    }
                    if st.shutdown {
                        st.alive -= 1;
                        break None;
                    }
                    st.idle += 1;
                    if st.alive > self.config.core_size {
                        let (g, to) = self.cv.wait_timeout(st, keep_alive).unwrap();
                        st = g;
                        st.idle -= 1;
                        if to.timed_out()
                            && st.pending.is_empty()
                            && st.alive > self.config.core_size
                        {
                            st.alive -= 1;
                            break None;
                        }
                    } else {
                        st = self.cv.wait(st).unwrap();
                        st.idle -= 1;
                    }
                }
            };
            match job {
                Some(job) => run_job(rt, job, thread),
                None => return,
            }
        }
    }
}

pub(crate) fn submit_pool(
    rt: &Runtime,
    pool: &Arc<RealPool>,
    mechanism: Mechanism,
    requester: ThreadIdentity,
    task: Task,
    site: Site,
) -> Result<TaskKey, RuntimeError> {
    let mut st = pool.state.lock().unwrap();
    if st.shutdown {
        return Err(RuntimeError::PoolShutDown);
    }
    let grow = if st.idle > st.pending.len() {
        false
    } else if st.alive < pool.config.max_size {
        true
    } else {
        let waiting = st.pending.len() - st.idle.min(st.pending.len());
        if pool.config.queue_bound.is_some_and(|b| waiting >= b) {
            return Err(RuntimeError::QueueFull);
        }
        false
    };
    let key = rt.new_key(mechanism);
    let control = rt.register(&key, mechanism, &task);
    real(rt).begin();
    rt.emit_schedule(mechanism, &key, requester, &site, &task.label);
    let job = Job::new(key.clone(), mechanism, control, task);
    if !grow {
        st.pending.push_back(job);
        drop(st);
        pool.cv.notify_one();
        return Ok(key);
    }
    st.alive += 1;
    st.spawned += 1;
    let name = format!("pool-{}-worker-{}", pool.index, st.spawned);
    drop(st);
    let thread = ThreadIdentity::child(rt.new_thread_id(), requester.thread_id);
    rt.emit_spawn(thread, None, &name);
    let (rt2, p2) = (rt.clone(), pool.clone());
    let handle = std::thread::spawn(move || p2.worker_loop(&rt2, job, thread));
    let r = real(rt);
    r.handles.lock().unwrap().push(handle);
    {
        let mut pools = r.pools.lock().unwrap();
        if !pools.iter().any(|p| Arc::ptr_eq(p, pool)) {
            pools.push(pool.clone());
        }
    }
    Ok(key)
}

pub(crate) fn cancel(rt: &Runtime, key: &TaskKey, control: &Arc<TaskControl>) -> CancelOutcome {
    if control.transition(QUEUED, CANCELLED) {
        // the queued job is skipped when a worker reaches it
        rt.emit_task(
            EventKind::Cancel,
            control.mechanism,
            key,
            rt.current_thread(),
            Some("removed from queue"),
        );
        real(rt).finish();
        return CancelOutcome::RemovedFromQueue;
    }
    match control.state() {
        RUNNING if control.checking => {
            if control.transition(RUNNING, CANCEL_REQUESTED) {
                CancelOutcome::SignalledRunning
            } else {
                CancelOutcome::TooLateFinished
            }
        }
        RUNNING => CancelOutcome::NotCancellable,
        CANCEL_REQUESTED => CancelOutcome::SignalledRunning,
        _ => CancelOutcome::TooLateFinished,
    }
}

pub(crate) fn after(rt: &Runtime, delay_ns: u64, f: Callback) {
    let r = real(rt);
    r.begin();
    let rt2 = rt.clone();
    let handle = std::thread::spawn(move || {
        std::thread::sleep(Duration::from_nanos(delay_ns));
        {
            let _current = CurrentThread::enter(rt2.inner.sink.uid(), rt2.main_thread());
            if let Err(e) = f(&rt2) {
                rt2.record_callback_error(e);
            }
        }
        real(&rt2).finish();
    });
    r.handles.lock().unwrap().push(handle);
}

/// Waits until every scheduled task has closed. Returns the number still open
/// on timeout.
pub(crate) fn drain(rt: &Runtime) -> Result<(), usize> {
    let r = real(rt);
    let deadline = Instant::now() + Duration::from_nanos(rt.inner.options.drain_timeout_ns);
    let mut guard = r.idle_lock.lock().unwrap();
    loop {
        let open = r.outstanding.load(Ordering::Acquire);
        if open == 0 {
            return Ok(());
        }
        let now = Instant::now();
        if now >= deadline {
            return Err(open);
        }
        let wait = (deadline - now).min(Duration::from_millis(50));
        guard = r.idle_cv.wait_timeout(guard, wait).unwrap().0;
    }
}

/// Stops all workers. Threads are joined only after a clean drain.
pub(crate) fn shutdown(rt: &Runtime, join: bool) {
    let r = real(rt);
    for s in r.serials.lock().unwrap().iter() {
        s.quit();
    }
    for p in r.pools.lock().unwrap().iter() {
        p.shutdown();
    }
    let handles = std::mem::take(&mut *r.handles.lock().unwrap());
    if join {
        for h in handles {
            let _ = h.join();
        }
    }
}
