//! Time sources for the executor.
//!
//! [`MonotonicClock`] reads `CLOCK_MONOTONIC`, which is shared by every process
//! on a host, so timestamps can cross process boundaries on one machine.
//! [`VirtualClock`] only moves when told to and makes runs deterministic.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Which clock a timestamp was read from. Timestamps of different domains
/// cannot be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClockDomain {
    HostMonotonic,
    Virtual(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamp {
    pub ns: u64,
    pub domain: ClockDomain,
}

pub trait Clock: Send {
    /// Nanoseconds since an arbitrary, fixed origin.
    fn now(&self) -> u64;

    fn domain(&self) -> ClockDomain;

    /// Returns no earlier than `deadline`.
    fn sleep_until(&self, deadline: u64);

    /// Occupies the caller for `ns` of clock time, standing in for
    /// computation.
    fn spend(&self, ns: u64);

    fn stamp(&self) -> Timestamp {
        Timestamp { ns: self.now(), domain: self.domain() }
    }
}

/// `CLOCK_MONOTONIC` with a sleep-then-spin wait for tight wake-ups.
#[derive(Debug, Clone)]
pub struct MonotonicClock {
    spin_window: Duration,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock { spin_window: Duration::from_micros(200) }
    }

    /// How long before a deadline the clock stops sleeping and starts polling.
    pub fn with_spin_window(spin_window: Duration) -> Self {
        MonotonicClock { spin_window }
    }

    pub fn read() -> u64 {
        let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
        // SAFETY: `ts` is a valid, writable timespec and CLOCK_MONOTONIC is
        // always available on Linux.
        let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
        debug_assert_eq!(rc, 0);
        ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> u64 {
        Self::read()
    }

    fn domain(&self) -> ClockDomain {
        ClockDomain::HostMonotonic
    }

    fn sleep_until(&self, deadline: u64) {
        let spin = self.spin_window.as_nanos() as u64;
        let now = Self::read();
        if deadline > now + spin {
            std::thread::sleep(Duration::from_nanos(deadline - now - spin));
        }
        while Self::read() < deadline {
            std::thread::yield_now();
        }
    }

    fn spend(&self, ns: u64) {
        let end = Self::read() + ns;
        while Self::read() < end {
            std::hint::spin_loop();
        }
    }
}

static NEXT_VIRTUAL_DOMAIN: AtomicU32 = AtomicU32::new(1);

/// Manually advanced clock. Clones share the same time.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    now: Arc<AtomicU64>,
    domain: u32,
}

impl VirtualClock {
    /// A fresh clock at zero in its own domain.
    pub fn new() -> Self {
        Self::starting_at(0)
    }

    pub fn starting_at(ns: u64) -> Self {
        VirtualClock {
            now: Arc::new(AtomicU64::new(ns)),
            domain: NEXT_VIRTUAL_DOMAIN.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// An independent clock (own time) in the same domain as `self`, like a
    /// second host whose clock is synchronized with this one.
    pub fn synchronized_peer(&self, start_ns: u64) -> Self {
        VirtualClock { now: Arc::new(AtomicU64::new(start_ns)), domain: self.domain }
    }

    pub fn advance(&self, ns: u64) {
        self.now.fetch_add(ns, Ordering::Relaxed);
    }

    pub fn set(&self, ns: u64) {
        self.now.fetch_max(ns, Ordering::Relaxed);
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> u64 {
        self.now.load(Ordering::Relaxed)
    }

    fn domain(&self) -> ClockDomain {
        ClockDomain::Virtual(self.domain)
    }

    fn sleep_until(&self, deadline: u64) {
        self.set(deadline);
    }

    fn spend(&self, ns: u64) {
        self.advance(ns);
    }
}
