//! Integer tick scheduling for multi-rate loops.

/// Fires at `rate_hz` on a base clock of `base_hz`, using floor counters so
/// the long-run rate is exact even when the ratio is not an integer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ticker {
    rate_hz: f64,
    base_hz: f64,
    fired: u64,
}

impl Ticker {
    pub fn new(rate_hz: f64, base_hz: f64) -> Self {
        Self {
            rate_hz,
            base_hz,
            fired: 0,
        }
    }

    /// Whether the sub-rate task runs on base tick `tick` (0-based). Tick 0
    /// always fires.
    pub fn fires(&mut self, tick: u64) -> bool {
        let due = ((tick as f64) * self.rate_hz / self.base_hz).floor() as u64 + 1;
        if due > self.fired {
            self.fired = due;
            true
        } else {
            false
        }
    }

    pub fn reset(&mut self) {
        self.fired = 0;
    }
}
