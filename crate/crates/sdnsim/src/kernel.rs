//! Discrete-event core: a logical clock in integer microseconds, an event
//! queue ordered by `(time, seq)`, one seeded random generator, and an
//! optional dispatch trace.
//!
//! Invariants the rest of the crate leans on:
//!
//! * The clock never moves backwards; events fire in `(time, seq)` order,
//!   so two events at the same instant dispatch in the order they were
//!   scheduled.
//! * All randomness flows from the kernel's generator, which is seeded once;
//!   identical seeds and identical scheduling give bit-identical traces.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Logical simulation time in microseconds.
pub type Micros = u64;

/// Handle for a registered simulation entity. Only registered entities may
/// be the target of an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EntityId(u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A dispatched or pending event.
#[derive(Clone, Debug, Serialize)]
pub struct Event<P> {
    pub time: Micros,
    pub seq: u64,
    pub target: EntityId,
    pub kind: P,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    /// The target entity was never registered.
    #[error("unknown entity {0}")]
    UnknownEntity(u32),
    /// The dispatch budget ran out before the queue drained.
    #[error("event budget exceeded after {dispatched} events")]
    BudgetExceeded { dispatched: u64 },
}

/// Receives each dispatched event. Handlers may schedule follow-up events
/// through the kernel they are handed.
pub trait Handler<P> {
    fn handle(&mut self, kernel: &mut Kernel<P>, event: Event<P>);
}

impl<P, F: FnMut(&mut Kernel<P>, Event<P>)> Handler<P> for F {
    fn handle(&mut self, kernel: &mut Kernel<P>, event: Event<P>) {
        self(kernel, event)
    }
}

struct Queued<P> {
    time: Micros,
    seq: u64,
    target: EntityId,
    kind: P,
}

// BinaryHeap is a max-heap; invert the ordering to pop smallest (time, seq).
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl<P> Eq for Queued<P> {}

#[derive(Default)]
struct Trace {
    record: bool,
    lines: Vec<String>,
    writer: Option<Box<dyn Write>>,
}

pub struct Kernel<P> {
    now: Micros,
    next_seq: u64,
    dispatched: u64,
    budget: Option<u64>,
    queue: BinaryHeap<Queued<P>>,
    entities: Vec<String>,
    rng: ChaCha8Rng,
    seed: u64,
    trace: Trace,
}

impl<P: Serialize> Kernel<P> {
    pub fn new(seed: u64) -> Self {
        Kernel {
            now: 0,
            next_seq: 0,
            dispatched: 0,
            budget: None,
            queue: BinaryHeap::new(),
            entities: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            trace: Trace::default(),
        }
    }

    /// Registers an entity and returns its id. Names are only used in the
    /// trace output; they need not be unique.
    pub fn register_entity(&mut self, name: &str) -> EntityId {
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(name.to_string());
        id
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities[id.index()]
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Caps the total number of dispatches across all subsequent runs.
    pub fn set_event_budget(&mut self, budget: Option<u64>) {
        self.budget = budget;
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Keeps every dispatched event in memory so `trace_hash`/`trace_lines`
    /// can report on it.
    pub fn record_trace(&mut self, on: bool) {
        self.trace.record = on;
    }

    /// Streams each dispatched event as one JSON line to `w`.
    pub fn set_trace_writer(&mut self, w: Box<dyn Write>) {
        self.trace.writer = Some(w);
    }

    pub fn trace_lines(&self) -> &[String] {
        &self.trace.lines
    }

    /// SHA-256 over the recorded trace, one line per dispatched event.
    pub fn trace_hash(&self) -> String {
        let mut h = Sha256::new();
        for line in &self.trace.lines {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// Schedules `kind` for `target` after `delay` microseconds. Returns the
    /// event's sequence number, unique for the lifetime of the kernel.
    pub fn schedule(
        &mut self,
        target: EntityId,
        delay: Micros,
        kind: P,
    ) -> Result<u64, KernelError> {
        if target.index() >= self.entities.len() {
            return Err(KernelError::UnknownEntity(target.0));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued {
            time: self.now + delay,
            seq,
            target,
            kind,
        });
        Ok(seq)
    }

    /// Dispatches every event with `time <= t`, then advances the clock to
    /// exactly `t`. Events scheduled by handlers inside the window are
    /// dispatched in the same call. Returns the number of dispatches.
    pub fn run_until<H: Handler<P>>(
        &mut self,
        t: Micros,
        handler: &mut H,
    ) -> Result<u64, KernelError> {
        assert!(
            t >= self.now,
            "run_until target would move the clock backwards"
        );
        let mut count = 0;
        while let Some(head) = self.queue.peek() {
            if head.time > t {
                break;
            }
            self.dispatch_one(handler)?;
            count += 1;
        }
        self.now = t;
        Ok(count)
    }

    /// Dispatches until the queue is empty or `max_events` have fired; the
    /// latter yields `BudgetExceeded` with the queue left intact.
    pub fn run_to_quiescence<H: Handler<P>>(
        &mut self,
        max_events: u64,
        handler: &mut H,
    ) -> Result<u64, KernelError> {
        let mut count = 0;
        while !self.queue.is_empty() {
            if count == max_events {
                return Err(KernelError::BudgetExceeded { dispatched: count });
            }
            self.dispatch_one(handler)?;
            count += 1;
        }
        Ok(count)
    }

    fn dispatch_one<H: Handler<P>>(&mut self, handler: &mut H) -> Result<(), KernelError> {
        if let Some(budget) = self.budget {
            if self.dispatched >= budget {
                return Err(KernelError::BudgetExceeded {
                    dispatched: self.dispatched,
                });
            }
        }
        let q = self.queue.pop().expect("dispatch_one on empty queue");
        debug_assert!(q.time >= self.now);
        self.now = q.time;
        self.dispatched += 1;
        let event = Event {
            time: q.time,
            seq: q.seq,
            target: q.target,
            kind: q.kind,
        };
        if self.trace.record || self.trace.writer.is_some() {
            let line = serde_json::json!({
                "time": event.time,
                "seq": event.seq,
                "target": self.entities[event.target.index()],
                "kind": serde_json::to_value(&event.kind).expect("event kind serializes"),
            })
            .to_string();
            if let Some(w) = self.trace.writer.as_mut() {
                let _ = writeln!(w, "{line}");
            }
            if self.trace.record {
                self.trace.lines.push(line);
            }
        }
        handler.handle(self, event);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Collects dispatches; optionally schedules children keyed by kind.
    #[derive(Default)]
    struct Log {
        seen: Vec<(Micros, u64, u32)>,
    }

    impl Handler<u32> for Log {
        fn handle(&mut self, _k: &mut Kernel<u32>, ev: Event<u32>) {
            self.seen.push((ev.time, ev.seq, ev.kind));
        }
    }

    fn kernel_with(n: usize) -> (Kernel<u32>, Vec<EntityId>) {
        let mut k = Kernel::new(7);
        let ids = (0..n)
            .map(|i| k.register_entity(&format!("e{i}")))
            .collect();
        (k, ids)
    }

    #[test]
    fn same_time_dispatches_in_schedule_order() {
        let (mut k, ids) = kernel_with(1);
        let mut log = Log::default();
        k.run_until(100, &mut log).unwrap();
        k.schedule(ids[0], 0, 1).unwrap();
        k.schedule(ids[0], 0, 2).unwrap();
        k.run_until(100, &mut log).unwrap();
        assert_eq!(log.seen, vec![(100, 0, 1), (100, 1, 2)]);
    }

    #[test]
    fn delay_is_added_to_now() {
        let (mut k, ids) = kernel_with(1);
        let mut log = Log::default();
        k.run_until(100, &mut log).unwrap();
        k.schedule(ids[0], 50, 9).unwrap();
        k.run_until(200, &mut log).unwrap();
        assert_eq!(log.seen, vec![(150, 0, 9)]);
    }

    #[test]
    fn shorter_delay_fires_first() {
        let (mut k, ids) = kernel_with(1);
        k.schedule(ids[0], 10, 1).unwrap();
        k.schedule(ids[0], 5, 2).unwrap();
        let mut log = Log::default();
        k.run_until(10, &mut log).unwrap();
        assert_eq!(log.seen, vec![(5, 1, 2), (10, 0, 1)]);
    }

    #[test]
    fn unknown_entity_is_rejected() {
        let (mut k, _) = kernel_with(1);
        let bogus = EntityId(5);
        assert_eq!(
            k.schedule(bogus, 0, 1).unwrap_err(),
            KernelError::UnknownEntity(5)
        );
    }

    #[test]
    fn run_until_on_empty_queue_advances_clock() {
        let (mut k, _) = kernel_with(1);
        let mut log = Log::default();
        assert_eq!(k.run_until(1000, &mut log).unwrap(), 0);
        assert_eq!(k.now(), 1000);
    }

    #[test]
    fn run_until_leaves_later_events_queued() {
        let (mut k, ids) = kernel_with(1);
        for (d, tag) in [(10, 1), (20, 2), (30, 3)] {
            k.schedule(ids[0], d, tag).unwrap();
        }
        let mut log = Log::default();
        assert_eq!(k.run_until(20, &mut log).unwrap(), 2);
        assert_eq!(k.now(), 20);
        assert_eq!(k.pending(), 1);
    }

    #[test]
    fn child_scheduled_at_same_time_runs_in_same_call() {
        struct Chain;
        impl Handler<u32> for Chain {
            fn handle(&mut self, k: &mut Kernel<u32>, ev: Event<u32>) {
                if ev.kind == 1 {
                    k.schedule(ev.target, 0, 2).unwrap();
                }
            }
        }
        let (mut k, ids) = kernel_with(1);
        k.schedule(ids[0], 10, 1).unwrap();
        assert_eq!(k.run_until(10, &mut Chain).unwrap(), 2);
    }

    #[test]
    fn quiescence_counts_all_events() {
        let (mut k, ids) = kernel_with(1);
        for i in 0..5 {
            k.schedule(ids[0], i * 3, i as u32).unwrap();
        }
        let mut log = Log::default();
        assert_eq!(k.run_to_quiescence(100, &mut log).unwrap(), 5);
    }

    #[test]
    fn self_rescheduling_timer_hits_budget() {
        struct Timer;
        impl Handler<u32> for Timer {
            fn handle(&mut self, k: &mut Kernel<u32>, ev: Event<u32>) {
                k.schedule(ev.target, 5, ev.kind).unwrap();
            }
        }
        let (mut k, ids) = kernel_with(1);
        k.schedule(ids[0], 0, 1).unwrap();
        assert_eq!(
            k.run_to_quiescence(10, &mut Timer).unwrap_err(),
            KernelError::BudgetExceeded { dispatched: 10 }
        );
        assert_eq!(k.pending(), 1);
    }

    #[test]
    fn quiescence_on_empty_queue_is_zero() {
        let (mut k, _) = kernel_with(1);
        let mut log = Log::default();
        assert_eq!(k.run_to_quiescence(10, &mut log).unwrap(), 0);
    }

    #[test]
    fn global_budget_interrupts_run_until() {
        let (mut k, ids) = kernel_with(1);
        for i in 0..5 {
            k.schedule(ids[0], i, 0).unwrap();
        }
        k.set_event_budget(Some(3));
        let mut log = Log::default();
        let err = k.run_until(100, &mut log).unwrap_err();
        assert_eq!(err, KernelError::BudgetExceeded { dispatched: 3 });
        assert_eq!(log.seen.len(), 3);
    }

    /// Under a randomized storm of schedules, dispatch order is monotone in
    /// time and FIFO within a timestamp.
    #[test]
    fn dispatch_order_is_monotone_and_fifo() {
        let (mut k, ids) = kernel_with(4);
        let mut delays = Vec::new();
        {
            let rng = k.rng();
            for _ in 0..500 {
                delays.push(rng.gen_range(0..50u64));
            }
        }
        for (i, d) in delays.iter().enumerate() {
            k.schedule(ids[i % 4], *d, i as u32).unwrap();
        }
        let mut log = Log::default();
        k.run_to_quiescence(10_000, &mut log).unwrap();
        for pair in log.seen.windows(2) {
            let (t0, s0, _) = pair[0];
            let (t1, s1, _) = pair[1];
            assert!(t0 < t1 || (t0 == t1 && s0 < s1));
        }
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let run = || {
            let mut k: Kernel<u32> = Kernel::new(42);
            k.record_trace(true);
            let e = k.register_entity("node");
            let mut delays = Vec::new();
            {
                let rng = k.rng();
                for _ in 0..100 {
                    delays.push(rng.gen_range(0..30u64));
                }
            }
            for (i, d) in delays.iter().enumerate() {
                k.schedule(e, *d, i as u32).unwrap();
            }
            let mut log = Log::default();
            k.run_to_quiescence(1000, &mut log).unwrap();
            k.trace_hash()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trace_lines_are_json_with_fixed_keys() {
        let (mut k, ids) = kernel_with(1);
        k.record_trace(true);
        k.schedule(ids[0], 3, 7).unwrap();
        let mut log = Log::default();
        k.run_until(3, &mut log).unwrap();
        let v: serde_json::Value = serde_json::from_str(&k.trace_lines()[0]).unwrap();
        assert_eq!(v["time"], 3);
        assert_eq!(v["seq"], 0);
        assert_eq!(v["target"], "e0");
        assert_eq!(v["kind"], 7);
    }
}
