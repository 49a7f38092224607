//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(time, sequence)`; the sequence number is assigned at
//! scheduling time so equal-time events pop in the order they were scheduled.
//! Random numbers come from named substreams so that draws for one purpose
//! (say, byzantine behaviour of station 17) never shift draws for another.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::SimError;

/// Simulation time, in seconds since scenario start.
pub type Seconds = f64;

/// The single place where hours are converted to seconds.
pub const SECONDS_PER_HOUR: f64 = 3600.0;

pub fn hours(h: f64) -> Seconds {
    h * SECONDS_PER_HOUR
}

pub fn to_hours(t: Seconds) -> f64 {
    t / SECONDS_PER_HOUR
}

/// Monotone simulation clock bounded by a horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    now: Seconds,
    horizon: Seconds,
}

impl SimClock {
    pub fn new(horizon: Seconds) -> Self {
        Self { now: 0.0, horizon }
    }

    pub fn now(&self) -> Seconds {
        self.now
    }

    pub fn horizon(&self) -> Seconds {
        self.horizon
    }

    fn advance_to(&mut self, t: Seconds) {
        debug_assert!(t >= self.now, "clock moved backwards: {} -> {}", self.now, t);
        self.now = t.min(self.horizon).max(self.now);
    }
}

/// Opaque handle returned by [`EventQueue::schedule`], used for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<P> {
    time: Seconds,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // Reversed: BinaryHeap is a max-heap, we want the earliest (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Pending events plus the clock they are scheduled against.
pub struct EventQueue<P> {
    heap: BinaryHeap<Entry<P>>,
    next_seq: u64,
    cancelled: HashSet<u64>,
    clock: SimClock,
    processed: u64,
}

impl<P> EventQueue<P> {
    pub fn new(horizon: Seconds) -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
            cancelled: HashSet::new(),
            clock: SimClock::new(horizon),
            processed: 0,
        }
    }

    pub fn now(&self) -> Seconds {
        self.clock.now()
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len() - self.cancelled.len().min(self.heap.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total events handed to a handler since construction.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(&mut self, time: Seconds, payload: P) -> Result<EventHandle, SimError> {
        if time.is_nan() || time < self.clock.now() {
            return Err(SimError::Causality {
                time,
                now: self.clock.now(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { time, seq, payload });
        Ok(EventHandle(seq))
    }

    /// Marks a pending event so it is silently discarded when reached.
    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_seq {
            self.cancelled.insert(handle.0);
        }
    }

    fn pop_due(&mut self, t_end: Seconds) -> Option<(Seconds, P)> {
        loop {
            let top = self.heap.peek()?;
            if top.time > t_end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if !self.cancelled.is_empty() && self.cancelled.remove(&entry.seq) {
                continue;
            }
            return Some((entry.time, entry.payload));
        }
    }

    /// Processes every event with `time <= t_end` in `(time, sequence)` order,
    /// including events scheduled by the handler itself, then sets the clock to
    /// `t_end` (capped at the horizon).
    pub fn run_until<F>(&mut self, t_end: Seconds, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Seconds, P),
    {
        let t_end = t_end.min(self.clock.horizon()).max(self.clock.now());
        let mut count = 0;
        while let Some((time, payload)) = self.pop_due(t_end) {
            self.clock.advance_to(time);
            handler(self, time, payload);
            count += 1;
        }
        self.processed += count;
        self.clock.advance_to(t_end);
        count
    }
}

/// A distribution accepted by [`RngStream::draw`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Uniform { a: f64, b: f64 },
    Bernoulli { p: f64 },
}

/// A reproducible random substream keyed by `(base seed, purpose, entity)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(base_seed: u64, purpose: &str, entity: u64) -> Self {
        let key = stable_hash(&[base_seed, hash_str(purpose), entity]);
        let mut seed = [0u8; 32];
        let mut state = key;
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self {
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Validated draw; Bernoulli outcomes are reported as 0.0 / 1.0.
    pub fn draw(&mut self, dist: Dist) -> Result<f64, SimError> {
        match dist {
            Dist::Uniform { a, b } => self.uniform(a, b),
            Dist::Bernoulli { p } => self.bernoulli(p).map(|x| if x { 1.0 } else { 0.0 }),
        }
    }

    pub fn uniform(&mut self, a: f64, b: f64) -> Result<f64, SimError> {
        if !(a.is_finite() && b.is_finite()) || a > b {
            return Err(SimError::InvalidParameter(format!(
                "uniform[{a}, {b}] requires finite a <= b"
            )));
        }
        Ok(a + (b - a) * self.unit())
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<bool, SimError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(SimError::InvalidParameter(format!(
                "bernoulli({p}) requires 0 <= p <= 1"
            )));
        }
        Ok(self.chance(p))
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Unchecked Bernoulli for hot paths where `p` is already known valid.
    pub fn chance(&mut self, p: f64) -> bool {
        // p = 0 must never fire, p = 1 must always fire.
        p > 0.0 && (p >= 1.0 || self.unit() < p)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the UTF-8 bytes; stable across platforms and releases.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Order-sensitive mix of integer key parts.
pub fn stable_hash(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

/// Stateless uniform draw in [0, 1) addressed by a key; used where the same
/// logical draw must be reproduced independently of how many other draws
/// happened before it (per-packet channel erasures, for instance).
pub fn keyed_unit(parts: &[u64]) -> f64 {
    (stable_hash(parts) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(q: &mut EventQueue<&'static str>, t: Seconds) -> Vec<&'static str> {
        let mut out = Vec::new();
        q.run_until(t, |_, _, p| out.push(p));
        out
    }

    #[test]
    fn pops_in_time_order() {
        let mut q = EventQueue::new(100.0);
        q.schedule(10.0, "ten").unwrap();
        q.schedule(5.0, "five").unwrap();
        assert_eq!(drain(&mut q, 100.0), vec!["five", "ten"]);
    }

    #[test]
    fn equal_times_pop_in_schedule_order() {
        let mut q = EventQueue::new(100.0);
        q.schedule(7.0, "A").unwrap();
        q.schedule(7.0, "B").unwrap();
        assert_eq!(drain(&mut q, 100.0), vec!["A", "B"]);
    }

    #[test]
    fn rejects_scheduling_in_the_past() {
        let mut q: EventQueue<()> = EventQueue::new(100.0);
        q.run_until(4.0, |_, _, _| {});
        assert!(matches!(q.schedule(3.0, ()), Err(SimError::Causality { .. })));
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut q: EventQueue<()> = EventQueue::new(1000.0);
        assert_eq!(q.run_until(100.0, |_, _, _| {}), 0);
        assert_eq!(q.now(), 100.0);
    }

    #[test]
    fn run_until_stops_at_boundary() {
        let mut q = EventQueue::new(100.0);
        for t in [1.0, 2.0, 3.0] {
            q.schedule(t, ()).unwrap();
        }
        assert_eq!(q.run_until(2.0, |_, _, _| {}), 2);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn child_at_same_time_runs_in_same_call() {
        // Trace: pop parent(t=5) -> schedule child(t=5, seq 1) -> pop child.
        let mut q = EventQueue::new(100.0);
        q.schedule(5.0, 0u32).unwrap();
        let mut seen = Vec::new();
        let n = q.run_until(5.0, |q, t, depth| {
            seen.push((t, depth));
            if depth == 0 {
                q.schedule(t, 1).unwrap();
            }
        });
        assert_eq!(n, 2);
        assert_eq!(seen, vec![(5.0, 0), (5.0, 1)]);
    }

    #[test]
    fn cancelled_events_are_skipped() {
        let mut q = EventQueue::new(100.0);
        let h = q.schedule(1.0, "gone").unwrap();
        q.schedule(2.0, "kept").unwrap();
        q.cancel(h);
        assert_eq!(drain(&mut q, 10.0), vec!["kept"]);
    }

    #[test]
    fn clock_never_passes_horizon() {
        let mut q: EventQueue<()> = EventQueue::new(50.0);
        q.schedule(60.0, ()).unwrap();
        assert_eq!(q.run_until(100.0, |_, _, _| {}), 0);
        assert_eq!(q.now(), 50.0);
    }

    #[test]
    fn bernoulli_extremes() {
        let mut s = RngStream::new(1, "test", 0);
        assert!((0..1000).all(|_| !s.bernoulli(0.0).unwrap()));
        assert!((0..1000).all(|_| s.bernoulli(1.0).unwrap()));
        assert!(s.bernoulli(1.5).is_err());
        assert!(s.uniform(2.0, 1.0).is_err());
    }

    #[test]
    fn uniform_mean_converges() {
        let mut s = RngStream::new(7, "uniform", 3);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| s.draw(Dist::Uniform { a: 0.7, b: 1.0 }).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.85).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn streams_are_isolated_and_reproducible() {
        let mut a1 = RngStream::new(9, "byzantine", 17);
        let mut a2 = RngStream::new(9, "byzantine", 17);
        let mut b = RngStream::new(9, "byzantine", 18);
        let xs: Vec<u64> = (0..8).map(|_| a1.next_u64()).collect();
        // Drawing heavily from another stream does not perturb the first.
        for _ in 0..1000 {
            b.next_u64();
        }
        let ys: Vec<u64> = (0..8).map(|_| a2.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs[0], RngStream::new(9, "byzantine", 18).next_u64());
    }

    #[test]
    fn keyed_unit_is_in_range_and_stable() {
        let u = keyed_unit(&[1, 2, 3]);
        assert!((0.0..1.0).contains(&u));
        assert_eq!(u, keyed_unit(&[1, 2, 3]));
        assert_ne!(u, keyed_unit(&[1, 3, 2]));
    }
}
