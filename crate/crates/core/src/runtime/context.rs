//! Submission-site capture.
//!
//! Each OS thread keeps a stack of logical frames pushed by workload code with
//! [`enter_frame`]. At submission the runtime combines that stack with the
//! submitting call site (via `#[track_caller]`) or an explicit site frame
//! attached to the task.

use std::cell::RefCell;
use std::collections::HashMap;
use std::marker::PhantomData;
use std::panic::Location;
use std::sync::OnceLock;

use crate::trace_model::{frame, ExecutionContext};

/// Maximum number of frames kept per context.
pub const MAX_CONTEXT_DEPTH: usize = 32;

/// Units starting with this prefix belong to the instrumentation layer.
pub const INTERNAL_UNIT_PREFIX: &str = "asyncscope::";

thread_local! {
    static FRAMES: RefCell<Vec<String>> = const { RefCell::new(Vec::new()) };
    static CACHE: RefCell<HashMap<(usize, usize), (Vec<String>, ExecutionContext)>> =
        RefCell::new(HashMap::new());
}

fn runtime_source_dir() -> &'static str {
    static DIR: OnceLock<String> = OnceLock::new();
    DIR.get_or_init(|| {
        let file = file!().replace('\\', "/");
        match file.rfind('/') {
            Some(i) => file[..=i].to_string(),
            None => String::new(),
        }
    })
}

fn internal_prefixes() -> [&'static str; 2] {
    [INTERNAL_UNIT_PREFIX, runtime_source_dir()]
}

/// Guard returned by [`enter_frame`]; pops the frame on drop.
#[must_use = "the frame is popped when the guard is dropped"]
pub struct FrameGuard {
    _not_send: PhantomData<*const ()>,
}

impl Drop for FrameGuard {
    fn drop(&mut self) {
        FRAMES.with(|f| {
            f.borrow_mut().pop();
        });
    }
}

/// Pushes a logical call frame on the current thread for the guard's lifetime.
pub fn enter_frame(unit: &str, symbol: &str, line: u32) -> FrameGuard {
    FRAMES.with(|f| f.borrow_mut().push(frame(unit, symbol, line)));
    FrameGuard {
        _not_send: PhantomData,
    }
}

/// Replaces the current thread's frame stack, returning the previous one.
pub(crate) fn swap_frames(stack: Vec<String>) -> Vec<String> {
    FRAMES.with(|f| std::mem::replace(&mut *f.borrow_mut(), stack))
}

#[derive(Debug, Clone)]
pub(crate) enum Site {
    Caller {
        location: &'static Location<'static>,
        api: &'static str,
    },
    Explicit(String),
}

impl Site {
    fn frame(&self) -> String {
        match self {
            Site::Caller { location, api } => frame(location.file(), api, location.line()),
            Site::Explicit(f) => f.clone(),
        }
    }
}

/// Builds the normalized context for a submission from `site` on this thread.
/// A context left empty after stripping becomes a single `<unknown>` frame.
pub(crate) fn capture(site: &Site) -> ExecutionContext {
    let build = |stack: &[String]| {
        let frames = std::iter::once(site.frame()).chain(stack.iter().rev().cloned());
        let ctx = ExecutionContext::normalized(frames, &internal_prefixes(), MAX_CONTEXT_DEPTH);
        if ctx.is_empty() {
            ExecutionContext::new(vec![frame("<unknown>", "submit", 0)])
        } else {
            ctx
        }
    };
    match site {
        Site::Explicit(_) => FRAMES.with(|f| build(&f.borrow())),
        Site::Caller { location, api } => {
            let key = (
                *location as *const Location<'static> as usize,
                api.as_ptr() as usize,
            );
            FRAMES.with(|f| {
                let stack = f.borrow();
                CACHE.with(|c| {
                    let mut cache = c.borrow_mut();
                    if let Some((snapshot, ctx)) = cache.get(&key) {
                        if snapshot.as_slice() == stack.as_slice() {
                            return ctx.clone();
                        }
                    }
                    let ctx = build(&stack);
                    cache.insert(key, (stack.clone(), ctx.clone()));
                    ctx
                })
            })
        }
    }
}
