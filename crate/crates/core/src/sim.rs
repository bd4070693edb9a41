//! Deterministic discrete-event engine and clock domains.
//!
//! Time is kept as an integer count of base ticks. The tick rate is the least
//! common multiple of the three domain frequencies, so a cycle of any domain is
//! an exact integer number of ticks (2.2/2.5/2.0 GHz gives a 110 GHz tick).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at tick {at} but current time is tick {now}")]
    SchedulingInPast { at: u64, now: u64 },
    #[error("time overflow converting {cycles} {domain:?} cycles")]
    TimeOverflow { cycles: u64, domain: Domain },
    #[error("invalid clock configuration: {0}")]
    InvalidClock(String),
}

/// Simulated time in base ticks of a [`Timebase`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ticks(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}t", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Cpu,
    Mmae,
    Noc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClockDomain {
    pub domain: Domain,
    pub frequency_hz: u64,
    /// Period in base ticks.
    pub period_ticks: u64,
}

/// The three clock domains plus the shared tick rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timebase {
    tick_hz: u64,
    cpu: ClockDomain,
    mmae: ClockDomain,
    noc: ClockDomain,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Timebase {
    pub fn new(cpu_hz: u64, mmae_hz: u64, noc_hz: u64) -> Result<Self, SimError> {
        if cpu_hz == 0 || mmae_hz == 0 || noc_hz == 0 {
            return Err(SimError::InvalidClock("frequencies must be positive".into()));
        }
        let mut tick_hz: u64 = 1;
        for f in [cpu_hz, mmae_hz, noc_hz] {
            tick_hz = (tick_hz / gcd(tick_hz, f))
                .checked_mul(f)
                .ok_or_else(|| SimError::InvalidClock("tick rate overflows u64".into()))?;
        }
        let mk = |domain, f: u64| ClockDomain {
            domain,
            frequency_hz: f,
            period_ticks: tick_hz / f,
        };
        Ok(Self {
            tick_hz,
            cpu: mk(Domain::Cpu, cpu_hz),
            mmae: mk(Domain::Mmae, mmae_hz),
            noc: mk(Domain::Noc, noc_hz),
        })
    }

    /// CPU 2.2 GHz, MMAE 2.5 GHz, NOC 2.0 GHz.
    pub fn maco_default() -> Self {
        Self::new(2_200_000_000, 2_500_000_000, 2_000_000_000).expect("static clocks")
    }

    pub fn tick_hz(&self) -> u64 {
        self.tick_hz
    }

    pub fn domain(&self, d: Domain) -> &ClockDomain {
        match d {
            Domain::Cpu => &self.cpu,
            Domain::Mmae => &self.mmae,
            Domain::Noc => &self.noc,
        }
    }

    pub fn period(&self, d: Domain) -> u64 {
        self.domain(d).period_ticks
    }

    pub fn cycles_to_time(&self, n: u64, d: Domain) -> Result<SimTime, SimError> {
        n.checked_mul(self.period(d))
            .map(SimTime)
            .ok_or(SimError::TimeOverflow { cycles: n, domain: d })
    }

    /// Unchecked variant for hot paths where operands are known to be small.
    #[inline]
    pub fn cycles(&self, n: u64, d: Domain) -> u64 {
        n * self.period(d)
    }

    /// Whole cycles of `d` elapsed at `t` (floor).
    pub fn time_to_cycles(&self, t: SimTime, d: Domain) -> u64 {
        t.0 / self.period(d)
    }

    /// First cycle edge of `d` at or after `t`.
    pub fn ceil_cycles(&self, t: SimTime, d: Domain) -> u64 {
        t.0.div_ceil(self.period(d))
    }

    pub fn to_seconds(&self, t: SimTime) -> f64 {
        t.0 as f64 / self.tick_hz as f64
    }

    pub fn to_picoseconds(&self, t: SimTime) -> f64 {
        t.0 as f64 * 1e12 / self.tick_hz as f64
    }

    /// Exact picosecond value, if the tick count is a whole number of picoseconds.
    pub fn to_picoseconds_exact(&self, t: SimTime) -> Option<u64> {
        let num = t.0 as u128 * 1_000_000_000_000u128;
        let den = self.tick_hz as u128;
        (num % den == 0).then(|| (num / den) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<P> {
    at: u64,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl<P> Eq for Entry<P> {}
impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Entry<P> {
    // min-heap on (time, sequence)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Priority queue of timestamped events with sequence-number tie-breaking.
pub struct EventQueue<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<P>>,
    cancelled: HashSet<u64>,
    processed: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(&mut self, at: SimTime, payload: P) -> Result<EventHandle, SimError> {
        if at < self.now {
            return Err(SimError::SchedulingInPast {
                at: at.0,
                now: self.now.0,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            at: at.0,
            seq,
            payload,
        });
        Ok(EventHandle(seq))
    }

    /// Schedules at `max(at, now)`; for callers that compute times which may lag the clock.
    pub fn schedule_clamped(&mut self, at: SimTime, payload: P) -> EventHandle {
        let at = at.max(self.now);
        self.schedule(at, payload).expect("clamped to now")
    }

    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        // Only pending events can be cancelled; a stale handle is harmless.
        if self.heap.iter().any(|e| e.seq == handle.0) {
            self.cancelled.insert(handle.0)
        } else {
            false
        }
    }

    /// Pops the next live event with `fire_time <= limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<(SimTime, P)> {
        loop {
            let top = self.heap.peek()?;
            if top.at > limit.0 {
                return None;
            }
            let e = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&e.seq) {
                continue;
            }
            self.now = SimTime(e.at);
            self.processed += 1;
            return Some((self.now, e.payload));
        }
    }

    pub fn pop(&mut self) -> Option<(SimTime, P)> {
        self.pop_until(SimTime(u64::MAX))
    }

    /// Processes every event with `fire_time <= limit` through `handler`.
    ///
    /// Returns the time of the last processed event, or the current time when
    /// nothing was processed.
    pub fn run_until<F>(&mut self, limit: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, SimTime, P),
    {
        while let Some((t, p)) = self.pop_until(limit) {
            handler(self, t, p);
        }
        self.now
    }
}

/// A resource reserved in `[start, end)` intervals. A request takes the
/// earliest gap at or after its arrival, so reservations made out of time
/// order do not block earlier traffic.
#[derive(Debug, Clone, Default)]
pub struct Timeline {
    busy: BTreeMap<u64, u64>,
}

impl Timeline {
    /// Books `len` units no earlier than `ready`; returns the start.
    pub fn reserve(&mut self, ready: u64, len: u64) -> u64 {
        let mut s = ready;
        if let Some((_, &e)) = self.busy.range(..=s).next_back() {
            s = s.max(e);
        }
        for (&b, &e) in self.busy.range(s..) {
            if b >= s + len {
                break;
            }
            s = s.max(e);
        }
        if len == 0 {
            return s;
        }
        let mut start = s;
        let mut end = s + len;
        if let Some((&b, &e)) = self.busy.range(..=start).next_back() {
            if e == start {
                start = b;
                self.busy.remove(&b);
            }
        }
        if let Some(e) = self.busy.remove(&end) {
            end = e;
        }
        self.busy.insert(start, end);
        s
    }

    /// Forgets intervals that end by `before`.
    pub fn retire(&mut self, before: u64) {
        while let Some((&b, &e)) = self.busy.first_key_value() {
            if e > before {
                break;
            }
            self.busy.remove(&b);
        }
    }

    pub fn intervals(&self) -> usize {
        self.busy.len()
    }
}
