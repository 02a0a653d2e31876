use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{EngineError, Event, SimTime};

/// An event with its due time and insertion sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheduled {
    pub at: SimTime,
    pub seq: u64,
    pub event: Event,
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Min-queue keyed by `(at, insertion sequence)`, so equal-time events
/// come out in the order they were scheduled.
#[derive(Debug, Default, Clone)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Scheduled>>,
    next_seq: u64,
    now: SimTime,
    non_tick: usize,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Queued events other than ticks.
    pub fn pending_inputs(&self) -> usize {
        self.non_tick
    }

    pub fn schedule(&mut self, event: Event, at: SimTime) -> Result<u64, EngineError> {
        if at < self.now {
            return Err(EngineError::PastTime { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        if !matches!(event, Event::Tick) {
            self.non_tick += 1;
        }
        self.heap.push(Reverse(Scheduled { at, seq, event }));
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(s)| s.at)
    }

    /// Removes the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Scheduled> {
        let Reverse(next) = self.heap.pop()?;
        if !matches!(next.event, Event::Tick) {
            self.non_tick -= 1;
        }
        self.now = next.at;
        Some(next)
    }
}
