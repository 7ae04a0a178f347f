//! Time accounting for simulated devices.
//!
//! A [`SimClock`] is either virtual (transfers advance a counter, nothing
//! sleeps) or real (transfers sleep for their modeled duration and `now`
//! reads the wall clock). Benchmarks measure elapsed time through the same
//! clock, so virtual runs are fully deterministic.

use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::model::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Virtual,
    Real,
}

#[derive(Debug)]
struct Inner {
    mode: ClockMode,
    virtual_us: Mutex<f64>,
    epoch: Instant,
}

#[derive(Debug, Clone)]
pub struct SimClock {
    inner: Arc<Inner>,
}

impl SimClock {
    pub fn new(mode: ClockMode) -> Self {
        SimClock {
            inner: Arc::new(Inner {
                mode,
                virtual_us: Mutex::new(0.0),
                epoch: Instant::now(),
            }),
        }
    }

    pub fn virtual_clock() -> Self {
        Self::new(ClockMode::Virtual)
    }

    pub fn real() -> Self {
        Self::new(ClockMode::Real)
    }

    pub fn mode(&self) -> ClockMode {
        self.inner.mode
    }

    /// Current time in microseconds since the clock was created.
    pub fn now_us(&self) -> f64 {
        match self.inner.mode {
            ClockMode::Virtual => *self.inner.virtual_us.lock(),
            ClockMode::Real => self.inner.epoch.elapsed().as_secs_f64() * 1e6,
        }
    }

    /// Accounts for `us` microseconds of device time.
    pub fn charge(&self, us: f64) {
        if us <= 0.0 {
            return;
        }
        match self.inner.mode {
            ClockMode::Virtual => *self.inner.virtual_us.lock() += us,
            ClockMode::Real => std::thread::sleep(Duration::from_secs_f64(us / 1e6)),
        }
    }
}

impl Default for SimClock {
    fn default() -> Self {
        SimClock::virtual_clock()
    }
}

/// Rate and latency of a simulated device. Rates are decimal MB/s, so a
/// transfer of `n` bytes takes `n / rate` microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceTiming {
    pub read_mbps: f64,
    pub write_mbps: f64,
    pub latency_us: f64,
}

impl DeviceTiming {
    pub fn symmetric(mbps: f64, latency_us: f64) -> Self {
        DeviceTiming {
            read_mbps: mbps,
            write_mbps: mbps,
            latency_us,
        }
    }

    pub fn transfer_us(&self, direction: Direction, nbytes: u64) -> f64 {
        let rate = match direction {
            Direction::Read => self.read_mbps,
            Direction::Write => self.write_mbps,
        };
        self.latency_us + nbytes as f64 / rate
    }

    pub(crate) fn is_valid(&self) -> bool {
        self.read_mbps > 0.0
            && self.write_mbps > 0.0
            && self.read_mbps.is_finite()
            && self.write_mbps.is_finite()
            && self.latency_us >= 0.0
    }
}
