use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use super::RuntimeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    RealMonotonic,
    Virtual,
}

impl ClockMode {
    /// Reads `ASYNCSCOPE_CLOCK` (`real` or `virtual`). Unset means virtual.
    pub fn from_env() -> Result<ClockMode, String> {
        match std::env::var("ASYNCSCOPE_CLOCK") {
            Err(_) => Ok(ClockMode::Virtual),
            Ok(v) => v.parse(),
        }
    }
}

impl std::str::FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "real" => Ok(ClockMode::RealMonotonic),
            "virtual" => Ok(ClockMode::Virtual),
            other => Err(format!(
                "unknown clock `{other}` (expected `real` or `virtual`)"
            )),
        }
    }
}

/// Nanosecond clock shared by everything in a session.
///
/// Virtual clocks only move through [`ClockSource::advance`]; real clocks
/// read a monotonic instant relative to their creation.
#[derive(Debug, Clone)]
pub struct ClockSource {
    inner: ClockInner,
}

#[derive(Debug, Clone)]
enum ClockInner {
    Real(Instant),
    Virtual(Arc<AtomicU64>),
}

impl ClockSource {
    pub fn real() -> Self {
        ClockSource {
            inner: ClockInner::Real(Instant::now()),
        }
    }

    pub fn virtual_clock() -> Self {
        ClockSource {
            inner: ClockInner::Virtual(Arc::new(AtomicU64::new(0))),
        }
    }

    pub fn new(mode: ClockMode) -> Self {
        match mode {
            ClockMode::RealMonotonic => ClockSource::real(),
            ClockMode::Virtual => ClockSource::virtual_clock(),
        }
    }

    pub fn mode(&self) -> ClockMode {
        match self.inner {
            ClockInner::Real(_) => ClockMode::RealMonotonic,
            ClockInner::Virtual(_) => ClockMode::Virtual,
        }
    }

    #[inline]
    pub fn now_ns(&self) -> u64 {
        match &self.inner {
            ClockInner::Real(origin) => origin.elapsed().as_nanos() as u64,
            ClockInner::Virtual(t) => t.load(Ordering::Acquire),
        }
    }

    pub fn advance(&self, duration_ns: u64) -> Result<u64, RuntimeError> {
        match &self.inner {
            ClockInner::Real(_) => Err(RuntimeError::NotVirtual),
            ClockInner::Virtual(t) => Ok(t.fetch_add(duration_ns, Ordering::AcqRel) + duration_ns),
        }
    }

    // Moves a virtual clock forward to `t`; never backwards.
    pub(crate) fn advance_to(&self, target: u64) {
        if let ClockInner::Virtual(t) = &self.inner {
            t.fetch_max(target, Ordering::AcqRel);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_moves_only_when_advanced() {
        let c = ClockSource::virtual_clock();
        assert_eq!(c.now_ns(), 0);
        assert_eq!(c.advance(5).unwrap(), 5);
        c.advance_to(3);
        assert_eq!(c.now_ns(), 5);
        c.advance_to(9);
        assert_eq!(c.now_ns(), 9);
    }

    #[test]
    fn real_clock_is_monotonic_and_cannot_be_advanced() {
        let c = ClockSource::real();
        let a = c.now_ns();
        let b = c.now_ns();
        assert!(b >= a);
        assert!(matches!(c.advance(1), Err(RuntimeError::NotVirtual)));
    }

    #[test]
    fn parse_modes() {
        assert_eq!(
            "real".parse::<ClockMode>().unwrap(),
            ClockMode::RealMonotonic
        );
        assert_eq!("virtual".parse::<ClockMode>().unwrap(), ClockMode::Virtual);
        assert!("wall".parse::<ClockMode>().is_err());
    }
}
