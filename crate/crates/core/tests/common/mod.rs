#![allow(dead_code)]

use std::sync::Arc;

use asyncscope::runtime::{
    run_session, ClockSource, Pool, PoolConfig, Runtime, RuntimeError, SerialQueue, SessionOptions,
    Task,
};
use asyncscope::{
    EventKind, ExecutionContext, Mechanism, TaskEvent, TaskKey, ThreadIdentity, TraceSession,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub const MS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy)]
pub enum Target {
    Spawn,
    Serial(usize),
    Pool(usize),
    FacadeDefault,
    FacadeOn(usize),
    Service(usize),
}

#[derive(Debug, Clone)]
pub struct Submission {
    pub at: u64,
    pub target: Target,
    pub duration: u64,
    pub checking: bool,
    pub cancel_after: Option<u64>,
    pub site: u32,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub serials: Vec<Mechanism>,
    pub pools: Vec<PoolConfig>,
    pub services: usize,
    pub submissions: Vec<Submission>,
}

/// A random mix of every mechanism. `unit` scales all times, so small units
/// keep real-clock runs short.
pub fn random_plan(rng: &mut impl Rng, unit: u64) -> Plan {
    let serial_kinds = [
        Mechanism::HandlerLooper,
        Mechanism::AsyncQuery,
        Mechanism::SerialService,
    ];
    let serials: Vec<Mechanism> = (0..rng.gen_range(1..=3))
        .map(|_| *serial_kinds.choose(rng).unwrap())
        .collect();
    let pools: Vec<PoolConfig> = (0..rng.gen_range(1..=3))
        .map(|_| {
            let max = rng.gen_range(1..=4);
            let mut cfg = PoolConfig::new(rng.gen_range(0..=max), max);
            if rng.gen_bool(0.3) {
                cfg = cfg.queue_bound(rng.gen_range(1..=4));
            }
            cfg
        })
        .collect();
    let services = rng.gen_range(1..=2);
    let submissions = (0..rng.gen_range(0..=40))
        .map(|_| {
            let target = match rng.gen_range(0..6) {
                0 => Target::Spawn,
                1 => Target::Serial(rng.gen_range(0..serials.len())),
                2 => Target::Pool(rng.gen_range(0..pools.len())),
                3 => Target::FacadeDefault,
                4 => Target::FacadeOn(rng.gen_range(0..pools.len())),
                _ => Target::Service(rng.gen_range(0..services)),
            };
            let at = if rng.gen_bool(0.3) {
                0
            } else {
                rng.gen_range(0..50) * unit
            };
            Submission {
                at,
                target,
                duration: rng.gen_range(0..20) * unit,
                checking: rng.gen_bool(0.5),
                cancel_after: rng.gen_bool(0.25).then(|| rng.gen_range(0..25) * unit),
                site: rng.gen_range(1..=5),
            }
        })
        .collect();
    Plan {
        serials,
        pools,
        services,
        submissions,
    }
}

struct Executors {
    serials: Vec<SerialQueue>,
    pools: Vec<Pool>,
}

fn submit(rt: &Runtime, ex: &Executors, s: &Submission) -> Result<(), RuntimeError> {
    let mut task = Task::new(format!("op{}", s.site))
        .duration_ns(s.duration)
        .at_site("app.Screen", "onAction", s.site);
    if s.checking {
        task = task.checking();
    }
    let main = rt.main_thread();
    let result = match s.target {
        Target::Spawn => rt.spawn_thread(main, task),
        Target::Serial(i) => ex.serials[i].submit(main, task),
        Target::Pool(i) => ex.pools[i].submit(main, task),
        Target::FacadeDefault => rt.async_facade().execute_default(main, task),
        Target::FacadeOn(i) => rt.async_facade().execute_on(&ex.pools[i], main, task),
        Target::Service(i) => rt.dispatch_service(&format!("svc{i}"), task, main),
    };
    let key = match result {
        Ok(key) => key,
        Err(RuntimeError::QueueFull) => return Ok(()),
        Err(e) => return Err(e),
    };
    if let Some(delay) = s.cancel_after {
        rt.after(delay, move |rt| rt.cancel(&key).map(drop))?;
    }
    Ok(())
}

pub fn run_plan(plan: &Plan, clock: ClockSource) -> Result<TraceSession, RuntimeError> {
    let plan = plan.clone();
    run_session(SessionOptions::new("random", clock), move |rt| {
        let main = rt.main_thread();
        let ex = Arc::new(Executors {
            serials: plan
                .serials
                .iter()
                .enumerate()
                .map(|(i, &m)| rt.serial_queue(main, m, &format!("serial{i}")))
                .collect::<Result<_, _>>()?,
            pools: plan
                .pools
                .iter()
                .map(|&c| rt.pool(c))
                .collect::<Result<_, _>>()?,
        });
        for i in 0..plan.services {
            rt.register_service(main, &format!("svc{i}"))?;
        }
        for s in plan.submissions {
            if s.at == 0 {
                submit(rt, &ex, &s)?;
            } else {
                let ex = ex.clone();
                rt.after(s.at, move |rt| submit(rt, &ex, &s))?;
            }
        }
        Ok(())
    })
}

/// Strings built from the characters the trace codec has to escape.
pub fn hostile_string(rng: &mut impl Rng) -> String {
    const PIECES: &[&str] = &[
        "_", "%", "|", ";", "\n", "\r", "%7C", "%%", "a", "Z", "0", ":", "#", " ", "é", "漢",
        "\u{0}", "\t", "PD1", "EV",
    ];
    (0..rng.gen_range(0..8))
        .map(|_| *PIECES.choose(rng).unwrap())
        .collect()
}

pub fn random_event(rng: &mut impl Rng) -> TaskEvent {
    let kinds = [
        EventKind::Spawn,
        EventKind::Schedule,
        EventKind::Start,
        EventKind::End,
        EventKind::Cancel,
    ];
    let nonempty = |rng: &mut _| {
        let s = hostile_string(rng);
        if s.is_empty() {
            "x".to_string()
        } else {
            s
        }
    };
    TaskEvent {
        timestamp_ns: if rng.gen_bool(0.1) {
            u64::MAX
        } else {
            rng.gen_range(0..1 << 40)
        },
        kind: *kinds.choose(rng).unwrap(),
        mechanism: rng
            .gen_bool(0.8)
            .then(|| *Mechanism::ALL.choose(rng).unwrap()),
        task_key: rng
            .gen_bool(0.8)
            .then(|| TaskKey::from(hostile_string(rng))),
        thread: ThreadIdentity {
            thread_id: rng.gen(),
            parent_thread_id: rng.gen_bool(0.5).then(|| rng.gen()),
            is_main: rng.gen(),
        },
        context: rng.gen_bool(0.6).then(|| {
            ExecutionContext::new((0..rng.gen_range(1..5)).map(|_| nonempty(rng)).collect())
        }),
        detail: rng.gen_bool(0.5).then(|| hostile_string(rng)),
    }
}

pub fn random_session(rng: &mut impl Rng) -> TraceSession {
    TraceSession {
        session_id: hostile_string(rng),
        config_label: hostile_string(rng),
        clock_origin_ns: rng.gen(),
        events: (0..rng.gen_range(0..30))
            .map(|_| random_event(rng))
            .collect(),
    }
}
