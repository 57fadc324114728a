//! Fixed-capacity experience replay: a FIFO ring of transitions sampled
//! uniformly with replacement.

use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

/// One environment interaction as stored for learning.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// Ring buffer of the most recent `capacity` transitions. Once full, each
/// push evicts the oldest resident.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    slots: Vec<Transition>,
    capacity: usize,
    /// Next slot to write; wraps once the buffer is full.
    write: usize,
}

impl ReplayBuffer {
    /// Panics if `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be >= 1");
        ReplayBuffer {
            slots: Vec::with_capacity(capacity),
            capacity,
            write: 0,
        }
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
            self.slots[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    /// Resident transitions in unspecified order.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.slots.iter()
    }

    /// Draws `batch_size` transitions uniformly at random, with replacement,
    /// so a transition may appear more than once in a batch. Requires the
    /// buffer to hold a full batch, or to be completely full when its
    /// capacity is below the batch size.
    pub fn sample<'a, R: Rng>(
        &'a self,
        rng: &mut R,
        batch_size: usize,
    ) -> Result<Vec<&'a Transition>> {
        let need = batch_size.min(self.capacity).max(1);
        if self.slots.len() < need {
            return Err(Error::InsufficientData {
                have: self.slots.len(),
                need,
            });
        }
        Ok((0..batch_size)
            .map(|_| &self.slots[rng.gen_range(0..self.slots.len())])
            .collect())
    }
}

/// Expected number of times a resident transition is drawn per environment
/// step, at steady state, when every learning update samples `batch_size`
/// transitions and `updates_per_step` updates run per step.
///
/// Each update draws `batch_size` samples spread uniformly over the buffer,
/// and a transition resides in a full buffer for `capacity` steps, so the
/// buffer size cancels: the rate is `batch_size * updates_per_step`.
pub fn expected_sample_rate(batch_size: usize, updates_per_step: f64) -> f64 {
    batch_size as f64 * updates_per_step
}
