//! Virtual-clock backend: a single-threaded discrete-event scheduler.
//!
//! Actions sit in an agenda ordered by `(virtual time, insertion sequence)`,
//! which gives FIFO tie-breaking at equal timestamps. Task bodies and user
//! callbacks run outside the scheduler lock so they can submit more work.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;

use super::context::{self, Site};
use super::{
    Backend, CancelOutcome, CurrentThread, PoolConfig, Runtime, RuntimeError, Task, TaskBody,
    TaskContext, TaskControl, Work, CANCELLED, CANCEL_REQUESTED, DONE, QUEUED, RUNNING,
};
use crate::trace_model::{EventKind, Mechanism, TaskKey, ThreadIdentity};

pub(crate) type Callback = Box<dyn FnOnce(&Runtime) -> Result<(), RuntimeError> + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exec {
    Thread,
    Serial(usize),
    Pool(usize, usize),
}

struct VTask {
    control: Arc<TaskControl>,
    mechanism: Mechanism,
    body: Option<TaskBody>,
    work: Work,
    poll_ns: Option<u64>,
    exec: Option<Exec>,
    worker: Option<ThreadIdentity>,
    start: Option<u64>,
    finish_at: Option<u64>,
}

struct VSerial {
    worker: ThreadIdentity,
    queue: VecDeque<TaskKey>,
    busy: bool,
    quit: bool,
}

struct VWorker {
    thread: ThreadIdentity,
    busy: bool,
    alive: bool,
    generation: u64,
}

struct VPool {
    config: PoolConfig,
    workers: Vec<VWorker>,
    pending: VecDeque<TaskKey>,
    shutdown: bool,
}

impl VPool {
    fn alive(&self) -> usize {
        self.workers.iter().filter(|w| w.alive).count()
    }
}

enum Action {
    Start {
        key: TaskKey,
        worker: ThreadIdentity,
        exec: Exec,
    },
    Finish(TaskKey),
    CancelObserved(TaskKey),
    Retire {
        pool: usize,
        worker: usize,
        generation: u64,
    },
    Callback(Callback),
}

enum Deferred {
    Body(TaskBody, TaskContext),
    Callback(Callback),
}

#[derive(Default)]
pub(crate) struct Sim {
    agenda: BinaryHeap<Reverse<(u64, u64)>>,
    actions: HashMap<u64, Action>,
    next_action: u64,
    tasks: HashMap<TaskKey, VTask>,
    serials: Vec<VSerial>,
    pools: Vec<VPool>,
    open_tasks: usize,
}

impl Sim {
    pub(crate) fn add_serial(&mut self, worker: ThreadIdentity) -> usize {
        self.serials.push(VSerial {
            worker,
            queue: VecDeque::new(),
            busy: false,
            quit: false,
        });
        self.serials.len() - 1
    }

    pub(crate) fn add_pool(&mut self, config: PoolConfig) -> usize {
        self.pools.push(VPool {
            config,
            workers: Vec::new(),
            pending: VecDeque::new(),
            shutdown: false,
        });
        self.pools.len() - 1
    }

    fn post(&mut self, at: u64, action: Action) {
        let id = self.next_action;
        self.next_action += 1;
        self.actions.insert(id, action);
        self.agenda.push(Reverse((at, id)));
    }

    fn insert_task(
        &mut self,
        key: TaskKey,
        control: Arc<TaskControl>,
        mechanism: Mechanism,
        task: Task,
    ) {
        self.open_tasks += 1;
        self.tasks.insert(
            key,
            VTask {
                control,
                mechanism,
                body: task.body,
                work: task.work,
                poll_ns: task.cancel_poll_ns,
                exec: None,
                worker: None,
                start: None,
                finish_at: None,
            },
        );
    }

    // Hands the freed executor slot to the next waiting task, if any.
    fn release(&mut self, exec: Exec, now: u64) {
        match exec {
            Exec::Thread => {}
            Exec::Serial(i) => {
                let s = &mut self.serials[i];
                match s.queue.pop_front() {
                    Some(next) => {
                        let worker = s.worker;
                        self.post(
                            now,
                            Action::Start {
                                key: next,
                                worker,
                                exec,
                            },
                        );
                    }
                    None => s.busy = false,
                }
            }
            Exec::Pool(p, w) => {
                let pool = &mut self.pools[p];
                match pool.pending.pop_front() {
                    Some(next) => {
                        let worker = pool.workers[w].thread;
                        self.post(
                            now,
                            Action::Start {
                                key: next,
                                worker,
                                exec,
                            },
                        );
                    }
                    None => {
                        let alive = pool.alive();
                        let worker = &mut pool.workers[w];
                        worker.busy = false;
                        worker.generation += 1;
                        let generation = worker.generation;
                        if alive > pool.config.core_size {
                            let at = now + pool.config.keep_alive_ns;
                            self.post(
                                at,
                                Action::Retire {
                                    pool: p,
                                    worker: w,
                                    generation,
                                },
                            );
                        }
                    }
                }
            }
        }
    }

    fn close_task(&mut self) {
        self.open_tasks -= 1;
    }
}

fn with_sim<R>(rt: &Runtime, f: impl FnOnce(&mut Sim) -> R) -> R {
    match &rt.inner.backend {
        Backend::Virtual(sim) => f(&mut sim.lock().unwrap()),
        Backend::Real(_) => unreachable!("virtual operation on a real-clock runtime"),
    }
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
    rt.emit_schedule(Mechanism::NewThread, &key, requester, &site, &task.label);
    rt.emit_spawn(thread, Some(&key), &task.label);
    let now = rt.now_ns();
    with_sim(rt, |sim| {
        sim.insert_task(key.clone(), control, Mechanism::NewThread, task);
        sim.post(
            now,
            Action::Start {
                key: key.clone(),
                worker: thread,
                exec: Exec::Thread,
            },
        );
    });
    Ok(key)
}

pub(crate) fn submit_serial(
    rt: &Runtime,
    index: usize,
    mechanism: Mechanism,
    requester: ThreadIdentity,
    task: Task,
    site: Site,
    key: TaskKey,
) -> Result<TaskKey, RuntimeError> {
    let now = rt.now_ns();
    with_sim(rt, |sim| {
        if sim.serials[index].quit {
            return Err(RuntimeError::WorkerDead);
        }
        let control = rt.register(&key, mechanism, &task);
        rt.emit_schedule(mechanism, &key, requester, &site, &task.label);
        sim.insert_task(key.clone(), control, mechanism, task);
        let s = &mut sim.serials[index];
        if s.busy {
            s.queue.push_back(key.clone());
        } else {
            s.busy = true;
            let worker = s.worker;
            sim.post(
                now,
                Action::Start {
                    key: key.clone(),
                    worker,
                    exec: Exec::Serial(index),
                },
            );
        }
        Ok(key)
    })
}

pub(crate) fn quit_serial(rt: &Runtime, index: usize) {
    with_sim(rt, |sim| sim.serials[index].quit = true);
}

pub(crate) fn submit_pool(
    rt: &Runtime,
    index: usize,
    mechanism: Mechanism,
    requester: ThreadIdentity,
    task: Task,
    site: Site,
) -> Result<TaskKey, RuntimeError> {
    let now = rt.now_ns();
    with_sim(rt, |sim| {
        let pool = &sim.pools[index];
        if pool.shutdown {
            return Err(RuntimeError::PoolShutDown);
        }
        enum Placement {
            Idle(usize),
            Grow,
            Queue,
        }
        let placement = if let Some(w) = pool.workers.iter().position(|w| w.alive && !w.busy) {
            Placement::Idle(w)
        } else if pool.alive() < pool.config.max_size {
            Placement::Grow
        } else if pool
            .config
            .queue_bound
            .is_none_or(|b| pool.pending.len() < b)
        {
            Placement::Queue
        } else {
            return Err(RuntimeError::QueueFull);
        };

        let key = rt.new_key(mechanism);
        let control = rt.register(&key, mechanism, &task);
        rt.emit_schedule(mechanism, &key, requester, &site, &task.label);
        sim.insert_task(key.clone(), control, mechanism, task);
        let pool = &mut sim.pools[index];
        let worker = match placement {
            Placement::Idle(w) => w,
            Placement::Grow => {
                let thread = ThreadIdentity::child(rt.new_thread_id(), requester.thread_id);
                let name = format!("pool-{}-worker-{}", index + 1, pool.workers.len() + 1);
                rt.emit_spawn(thread, None, &name);
                pool.workers.push(VWorker {
                    thread,
                    busy: false,
                    alive: true,
                    generation: 0,
                });
                pool.workers.len() - 1
            }
            Placement::Queue => {
                pool.pending.push_back(key.clone());
                return Ok(key);
            }
        };
        let w = &mut pool.workers[worker];
        w.busy = true;
        w.generation += 1;
        let thread = w.thread;
        sim.post(
            now,
            Action::Start {
                key: key.clone(),
                worker: thread,
                exec: Exec::Pool(index, worker),
            },
        );
        Ok(key)
    })
}

pub(crate) fn shutdown_pool(rt: &Runtime, index: usize) {
    with_sim(rt, |sim| sim.pools[index].shutdown = true);
}

pub(crate) fn after(rt: &Runtime, delay_ns: u64, f: Callback) {
    let at = rt.now_ns() + delay_ns;
    with_sim(rt, |sim| sim.post(at, Action::Callback(f)));
}

pub(crate) fn cancel(
    rt: &Runtime,
    key: &TaskKey,
    control: &Arc<TaskControl>,
) -> Result<CancelOutcome, RuntimeError> {
    let now = rt.now_ns();
    let canceller = rt.current_thread();
    with_sim(rt, |sim| {
        let task = sim
            .tasks
            .get(key)
            .ok_or_else(|| RuntimeError::UnknownTask(key.clone()))?;
        let mechanism = task.mechanism;
        match control.state() {
            QUEUED => {
                control
                    .state
                    .store(CANCELLED, std::sync::atomic::Ordering::Release);
                // a reserved slot (Start already posted) is released when Start runs
                for s in &mut sim.serials {
                    s.queue.retain(|k| k != key);
                }
                for p in &mut sim.pools {
                    p.pending.retain(|k| k != key);
                }
                rt.emit_task(
                    EventKind::Cancel,
                    mechanism,
                    key,
                    canceller,
                    Some("removed from queue"),
                );
                sim.close_task();
                Ok(CancelOutcome::RemovedFromQueue)
            }
            RUNNING => {
                let Some(poll) = task.poll_ns else {
                    return Ok(CancelOutcome::NotCancellable);
                };
                let start = task.start.unwrap_or(now);
                let elapsed = now - start;
                let observe = start + elapsed.div_ceil(poll) * poll;
                let ends_first = task.finish_at.is_some_and(|end| end <= observe);
                if !ends_first {
                    control
                        .state
                        .store(CANCEL_REQUESTED, std::sync::atomic::Ordering::Release);
                    sim.post(observe, Action::CancelObserved(key.clone()));
                }
                Ok(CancelOutcome::SignalledRunning)
            }
            CANCEL_REQUESTED => Ok(CancelOutcome::SignalledRunning),
            _ => Ok(CancelOutcome::TooLateFinished),
        }
    })
}

impl Sim {
    fn handle(&mut self, rt: &Runtime, now: u64, action: Action) -> Option<Deferred> {
        match action {
            Action::Start { key, worker, exec } => {
                let task = self
                    .tasks
                    .get_mut(&key)
                    .expect("started task is registered");
                if !task.control.transition(QUEUED, RUNNING) {
                    // cancelled while its start was pending
                    self.release(exec, now);
                    return None;
                }
                task.exec = Some(exec);
                task.worker = Some(worker);
                task.start = Some(now);
                rt.emit_task(EventKind::Start, task.mechanism, &key, worker, None);
                if let Work::Finite(d) = task.work {
                    task.finish_at = Some(now + d);
                }
                let finish_at = task.finish_at;
                let control = task.control.clone();
                let body = task.body.take();
                if let Some(at) = finish_at {
                    self.post(at, Action::Finish(key.clone()));
                }
                body.map(|b| {
                    Deferred::Body(
                        b,
                        TaskContext {
                            runtime: rt.clone(),
                            thread: worker,
                            key,
                            control,
                        },
                    )
                })
            }
            Action::Finish(key) => {
                let task = self.tasks.get(&key).expect("finished task is registered");
                let state = task.control.state();
                if state != RUNNING && state != CANCEL_REQUESTED {
                    return None;
                }
                task.control
                    .state
                    .store(DONE, std::sync::atomic::Ordering::Release);
                let (mechanism, worker, exec) =
                    (task.mechanism, task.worker.unwrap(), task.exec.unwrap());
                rt.emit_task(EventKind::End, mechanism, &key, worker, None);
                self.close_task();
                self.release(exec, now);
                None
            }
            Action::CancelObserved(key) => {
                let task = self.tasks.get(&key).expect("cancelled task is registered");
                if !task.control.transition(CANCEL_REQUESTED, CANCELLED) {
                    return None;
                }
                let (mechanism, worker, exec) =
                    (task.mechanism, task.worker.unwrap(), task.exec.unwrap());
                rt.emit_task(
                    EventKind::Cancel,
                    mechanism,
                    &key,
                    worker,
                    Some("cancellation observed"),
                );
                self.close_task();
                self.release(exec, now);
                None
            }
            Action::Retire {
                pool,
                worker,
                generation,
            } => {
                let pool = &mut self.pools[pool];
                let above_core = pool.alive() > pool.config.core_size;
                let w = &mut pool.workers[worker];
                if above_core && w.alive && !w.busy && w.generation == generation {
                    w.alive = false;
                }
                None
            }
            Action::Callback(f) => Some(Deferred::Callback(f)),
        }
    }

    // Pops the next action due no later than `deadline`. `Err(())` means the
    // remaining agenda cannot complete in time.
    fn pop_due(&mut self, deadline: u64) -> Option<Result<(u64, Action), ()>> {
        let Reverse((at, id)) = *self.agenda.peek()?;
        if at > deadline {
            let only_housekeeping = self
                .actions
                .values()
                .all(|a| matches!(a, Action::Retire { .. }));
            if self.open_tasks == 0 && only_housekeeping {
                self.agenda.clear();
                self.actions.clear();
                return None;
            }
            return Some(Err(()));
        }
        self.agenda.pop();
        let action = self
            .actions
            .remove(&id)
            .expect("agenda entry has an action");
        Some(Ok((at, action)))
    }
}

/// Runs the scheduler until the agenda is empty. Returns the number of open
/// tasks on timeout.
pub(crate) fn drain(rt: &Runtime) -> Result<(), usize> {
    let Backend::Virtual(sim) = &rt.inner.backend else {
        unreachable!()
    };
    let deadline = rt.inner.options.drain_timeout_ns;
    let uid = rt.inner.sink.uid();
    loop {
        let deferred = {
            let mut s = sim.lock().unwrap();
            match s.pop_due(deadline) {
                None => break,
                Some(Err(())) => return Err(s.open_tasks),
                Some(Ok((at, action))) => {
                    rt.inner.clock.advance_to(rt.inner.origin_ns + at);
                    s.handle(rt, at, action)
                }
            }
        };
        match deferred {
            None => {}
            Some(Deferred::Body(body, ctx)) => {
                let _current = CurrentThread::enter(uid, ctx.thread);
                let saved = context::swap_frames(Vec::new());
                body(&ctx);
                context::swap_frames(saved);
            }
            Some(Deferred::Callback(f)) => {
                let _current = CurrentThread::enter(uid, rt.main_thread());
                let saved = context::swap_frames(Vec::new());
                let r = f(rt);
                context::swap_frames(saved);
                if let Err(e) = r {
                    rt.record_callback_error(e);
                }
            }
        }
    }
    let s = sim.lock().unwrap();
    if s.open_tasks > 0 {
        Err(s.open_tasks)
    } else {
        Ok(())
    }
}
