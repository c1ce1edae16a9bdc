//! Bounded FIFO experience buffer with uniform sampling without replacement.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::student::StateVector;

/// Continuous-action transition `(s, a, r, s')`; `action` is the raw pair in `[-1, 1]^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: StateVector,
    pub action: [f64; 2],
    pub reward: f64,
    pub next_state: StateVector,
}

/// Discrete-action transition, the action being a batch id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnTransition {
    pub state: StateVector,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateVector,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be >= 1".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Append, evicting the oldest entry when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    /// `m` distinct entries chosen uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<&T>> {
        if m > self.items.len() || m == 0 {
            return Err(Error::InsufficientData {
                needed: m.max(1),
                available: self.items.len(),
            });
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), m)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    /// The `m` most recent entries, oldest first.
    pub fn recent(&self, m: usize) -> Result<Vec<&T>> {
        if m > self.items.len() || m == 0 {
            return Err(Error::InsufficientData {
                needed: m.max(1),
                available: self.items.len(),
            });
        }
        Ok(self.items.iter().skip(self.items.len() - m).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}
