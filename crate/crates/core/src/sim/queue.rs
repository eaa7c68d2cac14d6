use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::SimError;

#[derive(Debug)]
pub struct Event<T> {
    pub time: u64,
    pub seq: u64,
    pub payload: T,
}

impl<T> PartialEq for Event<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<T> Eq for Event<T> {}

impl<T> PartialOrd for Event<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Event<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Next-event queue with a virtual clock. Ties on time are broken by
/// insertion order.
#[derive(Debug)]
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<Event<T>>>,
    next_seq: u64,
    now: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
        }
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: u64, payload: T) -> Result<u64, SimError> {
        if time < self.now {
            return Err(SimError::ScheduleInPast { at: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { time, seq, payload }));
        Ok(seq)
    }

    /// Removes the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Event<T>> {
        let Reverse(e) = self.heap.pop()?;
        self.now = e.time;
        Some(e)
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_times_pop_in_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(5, 'a').unwrap();
        q.schedule(5, 'b').unwrap();
        q.schedule(3, 'c').unwrap();
        let order: Vec<char> = std::iter::from_fn(|| q.pop().map(|e| e.payload)).collect();
        assert_eq!(order, ['c', 'a', 'b']);
        assert_eq!(q.now(), 5);
    }

    #[test]
    fn past_scheduling_is_an_error() {
        let mut q = EventQueue::new();
        q.schedule(0, ()).unwrap();
        q.pop();
        q.schedule(0, ()).unwrap();
        q.schedule(10, ()).unwrap();
        q.pop();
        q.pop();
        assert!(matches!(q.schedule(9, ()), Err(SimError::ScheduleInPast { at: 9, now: 10 })));
    }
}
