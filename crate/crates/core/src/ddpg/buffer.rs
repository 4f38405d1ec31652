use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::FormatError;
use crate::rng::RngState;

/// One stored step. `action` is kept in the actor's `[-1, 1]` output space.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring; once full, each push overwrites the oldest entry.
/// Sampling is uniform with replacement over occupied slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, slots: Vec::new(), next: 0, rng }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.slots.len() < self.capacity {
            self.slots.push(t);
        } else {
            self.slots[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, slot: usize) -> &Transition {
        &self.slots[slot]
    }

    pub fn sample_indices(&mut self, batch: usize) -> Vec<usize> {
        let n = self.slots.len();
        (0..batch).map(|_| self.rng.random_range(0..n)).collect()
    }

    pub fn sample(&mut self, batch: usize) -> Vec<&Transition> {
        let idx = self.sample_indices(batch);
        idx.into_iter().map(|i| &self.slots[i]).collect()
    }

    pub fn write(&self, w: &mut ByteWriter) {
        w.u64(self.capacity as u64);
        w.u64(self.next as u64);
        w.u64(self.slots.len() as u64);
        for t in &self.slots {
            w.f64s(&t.state);
            w.f64s(&t.action);
            w.f64(t.reward);
            w.f64s(&t.next_state);
            w.u8(t.done as u8);
        }
        RngState::capture(&self.rng).write(w);
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self, FormatError> {
        let capacity = r.u64()? as usize;
        let next = r.u64()? as usize;
        let len = r.u64()? as usize;
        if capacity == 0 || len > capacity || next >= capacity {
            return Err(FormatError::Invalid("replay buffer header out of range".into()));
        }
        let mut slots = Vec::with_capacity(len);
        for _ in 0..len {
            slots.push(Transition {
                state: r.f64s()?,
                action: r.f64s()?,
                reward: r.f64()?,
                next_state: r.f64s()?,
                done: r.u8()? != 0,
            });
        }
        let rng = RngState::read(r)?.restore();
        Ok(Self { capacity, slots, next, rng })
    }
}
