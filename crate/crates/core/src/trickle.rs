//! Trickle timer driving DIO emission.

use rand::Rng;

use crate::types::SimTime;

/// What the owner should schedule after a trickle state change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrickleSchedule {
    /// Delay until the transmission point `t`.
    pub fire_in: SimTime,
    /// Delay until the end of the current interval.
    pub interval_end_in: SimTime,
    pub generation: u64,
}

#[derive(Clone, Debug)]
pub struct TrickleTimer {
    pub i_min: SimTime,
    pub max_doublings: u32,
    pub k: u32,
    pub interval: SimTime,
    /// Offset of the transmission point within the current interval.
    pub t: SimTime,
    pub counter: u32,
    /// Bumped on every new interval; stale timer events carry an old value.
    pub generation: u64,
    running: bool,
}

impl TrickleTimer {
    pub fn new(i_min: SimTime, max_doublings: u32, k: u32) -> Self {
        Self {
            i_min,
            max_doublings,
            k,
            interval: i_min,
            t: SimTime::ZERO,
            counter: 0,
            generation: 0,
            running: false,
        }
    }

    pub fn i_max(&self) -> SimTime {
        SimTime(self.i_min.0 << self.max_doublings)
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    /// Starts from `i_min`.
    pub fn start<R: Rng>(&mut self, rng: &mut R) -> TrickleSchedule {
        self.running = true;
        self.interval = self.i_min;
        self.begin_interval(rng)
    }

    pub fn stop(&mut self) {
        self.running = false;
        self.generation += 1;
    }

    fn begin_interval<R: Rng>(&mut self, rng: &mut R) -> TrickleSchedule {
        self.counter = 0;
        self.generation += 1;
        let half = self.interval.0 / 2;
        self.t = SimTime(half + rng.random_range(0..half.max(1)));
        TrickleSchedule {
            fire_in: self.t,
            interval_end_in: self.interval,
            generation: self.generation,
        }
    }

    /// Transmission point reached: true if the node should transmit.
    pub fn on_fire(&self) -> bool {
        self.counter < self.k
    }

    /// Interval over: double (bounded) and start the next one.
    pub fn on_interval_end<R: Rng>(&mut self, rng: &mut R) -> TrickleSchedule {
        if self.interval < self.i_max() {
            self.interval = SimTime((self.interval.0 * 2).min(self.i_max().0));
        }
        self.begin_interval(rng)
    }

    pub fn hear_consistent(&mut self) {
        self.counter += 1;
    }

    /// Inconsistency: restart at `i_min` unless already there.
    pub fn reset<R: Rng>(&mut self, rng: &mut R) -> Option<TrickleSchedule> {
        if !self.running {
            return Some(self.start(rng));
        }
        if self.interval == self.i_min {
            return None;
        }
        self.interval = self.i_min;
        Some(self.begin_interval(rng))
    }
}
