//! Workloads shared by the benchmarks.

use asyncscope::runtime::{
    run_session, ClockSource, PoolConfig, RuntimeError, SessionOptions, Task,
};
use asyncscope::TraceSession;

/// Submits `tasks` empty jobs to a fixed pool of `workers` on the real clock.
pub fn pool_burst(tasks: usize, workers: usize, emit: bool) -> Result<TraceSession, RuntimeError> {
    let options = SessionOptions::new("burst", ClockSource::real()).emit_events(emit);
    run_session(options, |rt| {
        let main = rt.main_thread();
        let pool = rt.pool(PoolConfig::fixed(workers))?;
        for _ in 0..tasks {
            pool.submit(main, Task::new("noop"))?;
        }
        Ok(())
    })
}

/// A virtual-clock trace with `tasks` jobs spread over `sites` call sites and
/// three executors.
pub fn synthetic_trace(tasks: usize, sites: u32) -> TraceSession {
    run_session(
        SessionOptions::new("synthetic", ClockSource::virtual_clock()),
        |rt| {
            let main = rt.main_thread();
            let pool = rt.pool(PoolConfig::new(2, 4))?;
            let looper = rt.serial_queue(main, asyncscope::Mechanism::HandlerLooper, "looper")?;
            let facade = rt.async_facade();
            for i in 0..tasks {
                let site = i as u32 % sites;
                let task = Task::new("job")
                    .duration_ns(1_000 + (i as u64 * 7_919) % 50_000)
                    .at_site("bench.Screen", "onEvent", site);
                match i % 3 {
                    0 => pool.submit(main, task)?,
                    1 => looper.submit(main, task)?,
                    _ => facade.execute_default(main, task)?,
                };
            }
            Ok(())
        },
    )
    .expect("synthetic workload")
}
