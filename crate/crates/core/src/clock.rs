use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

/// Millisecond clock. Harness runs use [`ManualClock`] so that transcripts
/// do not depend on wall time.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
    }
}

/// Logical clock that advances by one tick per reading unless moved
/// explicitly.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
    tick: u64,
}

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock { now: AtomicU64::new(start_ms), tick: 0 }
    }

    pub fn ticking(start_ms: u64, tick_ms: u64) -> Self {
        ManualClock { now: AtomicU64::new(start_ms), tick: tick_ms }
    }

    pub fn advance(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set(&self, ms: u64) {
        self.now.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.now.fetch_add(self.tick, Ordering::SeqCst)
    }
}
