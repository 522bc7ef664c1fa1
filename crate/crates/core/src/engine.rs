//! Deterministic discrete-event kernel.
//!
//! Events are ordered by `(fire_time, tie_seq)`, where `tie_seq` is a
//! per-engine counter bumped on every `schedule` call. Two events therefore
//! never compare equal and replaying a run with the same inputs dispatches
//! the exact same sequence.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Host clock cycles since the start of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn cycles(self) -> u64 {
        self.0
    }

    pub fn after(self, cycles: u64) -> SimTime {
        SimTime(self.0 + cycles)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which hardware component an event is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComponentId {
    Core(u16),
    L1(u16),
    Llc,
    MemCtrl,
    Pim,
    Agent,
}

impl ComponentId {
    fn code(self) -> u64 {
        match self {
            ComponentId::Core(i) => 0x100 | i as u64,
            ComponentId::L1(i) => 0x200 | i as u64,
            ComponentId::Llc => 0x300,
            ComponentId::MemCtrl => 0x400,
            ComponentId::Pim => 0x500,
            ComponentId::Agent => 0x600,
        }
    }
}

#[derive(Debug)]
pub struct Event<P> {
    pub fire_time: SimTime,
    pub tie_seq: u64,
    pub target: ComponentId,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_time == other.fire_time && self.tie_seq == other.tie_seq
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    // Reversed so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_time, other.tie_seq).cmp(&(self.fire_time, self.tie_seq))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("livelock: dispatched {events} events without reaching quiescence (watchdog cap {cap}) at t={at}")]
    Livelock { events: u64, cap: u64, at: SimTime },
}

pub struct Engine<P> {
    queue: BinaryHeap<Event<P>>,
    now: SimTime,
    next_seq: u64,
    dispatched: u64,
    watchdog: u64,
    trace_digest: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_mix(mut h: u64, v: u64) -> u64 {
    for b in v.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl<P> Engine<P> {
    /// `watchdog` caps the number of dispatched events per `run_until` call.
    pub fn new(watchdog: u64) -> Self {
        Engine {
            queue: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            dispatched: 0,
            watchdog,
            trace_digest: FNV_OFFSET,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Running hash over `(fire_time, tie_seq, target)` of every dispatched event.
    pub fn trace_digest(&self) -> u64 {
        self.trace_digest
    }

    /// Schedules `payload` for `target` at `fire_time`.
    ///
    /// Scheduling in the past is a simulator bug and aborts.
    pub fn schedule(&mut self, fire_time: SimTime, target: ComponentId, payload: P) {
        assert!(
            fire_time >= self.now,
            "event for {target:?} scheduled in the past: fire_time={fire_time} now={}",
            self.now
        );
        let tie_seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_time,
            tie_seq,
            target,
            payload,
        });
    }

    pub fn schedule_in(&mut self, delay: u64, target: ComponentId, payload: P) {
        let at = self.now.after(delay);
        self.schedule(at, target, payload);
    }

    /// Pops the next event if it fires at or before `limit`, advancing `now`.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<Event<P>> {
        if self.queue.peek()?.fire_time > limit {
            return None;
        }
        let ev = self.queue.pop()?;
        debug_assert!(ev.fire_time >= self.now);
        self.now = ev.fire_time;
        self.dispatched += 1;
        self.trace_digest = fnv_mix(
            fnv_mix(fnv_mix(self.trace_digest, ev.fire_time.0), ev.tie_seq),
            ev.target.code(),
        );
        Some(ev)
    }

    /// Dispatches every event with `fire_time <= limit` (or until the queue
    /// drains) through `handler`, returning the final time.
    pub fn run_until<F>(&mut self, limit: SimTime, mut handler: F) -> Result<SimTime, EngineError>
    where
        F: FnMut(&mut Engine<P>, Event<P>),
    {
        let start = self.dispatched;
        while let Some(ev) = self.pop_until(limit) {
            handler(self, ev);
            let n = self.dispatched - start;
            if n >= self.watchdog {
                return Err(EngineError::Livelock {
                    events: n,
                    cap: self.watchdog,
                    at: self.now,
                });
            }
        }
        Ok(self.now)
    }
}

fn fnv_str(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent 64-bit seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix(seed ^ splitmix(fnv_str(label)))
}

/// A counter-based random stream keyed by `(seed, stream label)`.
///
/// The ChaCha key comes from the seed and the stream id from the label, so
/// adding a stream never shifts the draws of another one.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
    draws: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("empty range: lo={lo} > hi={hi}")]
pub struct EmptyRange {
    pub lo: i64,
    pub hi: i64,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut key = [0u8; 32];
        let mut s = seed;
        for chunk in key.chunks_mut(8) {
            s = splitmix(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(fnv_str(label));
        RngStream {
            seed,
            label: label.to_string(),
            rng,
            draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn draw_uniform(&mut self, lo: i64, hi: i64) -> Result<i64, EmptyRange> {
        if lo > hi {
            return Err(EmptyRange { lo, hi });
        }
        self.draws += 1;
        Ok(self.rng.random_range(lo..=hi))
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        self.draws += 1;
        self.rng.random_range(0..n)
    }

    pub fn unit(&mut self) -> f64 {
        self.draws += 1;
        self.rng.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.random::<u64>()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// How the simulator resolves its nondeterministic choice points.
#[derive(Clone, Debug)]
enum ChoiceMode {
    Random {
        seed: u64,
        streams: Vec<RngStream>,
    },
    Path {
        prefix: Vec<u32>,
        depth_bound: usize,
    },
}

/// One branching decision taken during a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub choice: u32,
    pub arity: u32,
}

/// Source of every nondeterministic decision: network jitter, interloper
/// placement, thread start skew and controller reorder picks.
///
/// In random mode each label gets its own `RngStream`. In path mode the
/// decisions replay a prefix and then take branch 0, recording the arity of
/// every branching point so an explorer can enumerate siblings.
#[derive(Clone, Debug)]
pub struct Chooser {
    mode: ChoiceMode,
    recorded: Vec<Decision>,
    truncated: bool,
}

impl Chooser {
    pub fn random(seed: u64) -> Self {
        Chooser {
            mode: ChoiceMode::Random {
                seed,
                streams: Vec::new(),
            },
            recorded: Vec::new(),
            truncated: false,
        }
    }

    pub fn path(prefix: Vec<u32>, depth_bound: usize) -> Self {
        Chooser {
            mode: ChoiceMode::Path {
                prefix,
                depth_bound,
            },
            recorded: Vec::new(),
            truncated: false,
        }
    }

    pub fn is_exhaustive(&self) -> bool {
        matches!(self.mode, ChoiceMode::Path { .. })
    }

    fn stream(&mut self, label: &str) -> &mut RngStream {
        let ChoiceMode::Random { seed, streams } = &mut self.mode else {
            unreachable!("stream lookup in path mode");
        };
        let idx = match streams.iter().position(|s| s.label() == label) {
            Some(i) => i,
            None => {
                streams.push(RngStream::new(*seed, label));
                streams.len() - 1
            }
        };
        &mut streams[idx]
    }

    /// Picks one of `arity` branches.
    pub fn pick(&mut self, label: &str, arity: u32) -> u32 {
        assert!(arity > 0);
        if arity == 1 {
            return 0;
        }
        let choice = match &self.mode {
            ChoiceMode::Random { .. } => self.stream(label).below(arity as u64) as u32,
            ChoiceMode::Path {
                prefix,
                depth_bound,
            } => {
                let idx = self.recorded.len();
                if idx < prefix.len() {
                    prefix[idx].min(arity - 1)
                } else {
                    if idx >= *depth_bound {
                        self.truncated = true;
                    }
                    0
                }
            }
        };
        self.recorded.push(Decision { choice, arity });
        choice
    }

    /// Extra network delay in `[0, max]`. Path mode branches only on the two
    /// extremes and only for `branching` hops; other hops get no jitter.
    pub fn jitter(&mut self, label: &str, max: u64, branching: bool) -> u64 {
        if max == 0 {
            return 0;
        }
        match self.mode {
            ChoiceMode::Random { .. } => self.stream(label).below(max + 1),
            ChoiceMode::Path { .. } => {
                if branching {
                    self.pick(label, 2) as u64 * max
                } else {
                    0
                }
            }
        }
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.recorded
    }

    pub fn path_taken(&self) -> Vec<u32> {
        self.recorded.iter().map(|d| d.choice).collect()
    }

    /// True when a branching point beyond the depth bound was forced to 0.
    pub fn truncated(&self) -> bool {
        self.truncated
    }
}
