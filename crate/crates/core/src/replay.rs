//! Capacity-bounded FIFO experience store shared by collection workers and
//! the learner.
//!
//! A plain mutex guards the ring: pushes assign a global sequence number
//! under the lock, sampling copies records out, and eviction is strictly
//! oldest-first regardless of producer interleaving. Depth images stay in
//! 8-bit code space so a 50k-record buffer of 80×100 observations fits in a
//! couple of gigabytes.

use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sensing::Observation;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("insufficient data: have {have}, need {need}")]
    Insufficient { have: usize, need: usize },
    #[error("replay io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
}

/// One stored step: clean and corrupted observation pairs before and after
/// the action, the normalized action, the reward, and how the step ended.
/// `terminal` marks true environment termination (no bootstrap); `truncated`
/// marks the step cap (the value function still bootstraps).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub priv_obs: Observation,
    pub corrupt_obs: Observation,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_priv_obs: Observation,
    pub next_corrupt_obs: Observation,
    pub terminal: bool,
    pub truncated: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<(), ReplayError> {
        if self.terminal && self.truncated {
            return Err(ReplayError::InvalidTransition(
                "terminal and truncated are mutually exclusive".into(),
            ));
        }
        if !self.reward.is_finite() || !self.action.iter().all(|a| a.is_finite()) {
            return Err(ReplayError::InvalidTransition("non-finite numbers".into()));
        }
        if self.action.is_empty() {
            return Err(ReplayError::InvalidTransition("empty action".into()));
        }
        if !self.priv_obs.privileged
            || !self.next_priv_obs.privileged
            || self.corrupt_obs.privileged
            || self.next_corrupt_obs.privileged
        {
            return Err(ReplayError::InvalidTransition(
                "privileged flags do not match slot roles".into(),
            ));
        }
        let shape = (self.priv_obs.depth.h, self.priv_obs.depth.w);
        for obs in [
            &self.corrupt_obs,
            &self.next_priv_obs,
            &self.next_corrupt_obs,
        ] {
            if (obs.depth.h, obs.depth.w) != shape {
                return Err(ReplayError::InvalidTransition(
                    "observation shapes differ within one transition".into(),
                ));
            }
        }
        Ok(())
    }
}

struct Slot {
    seq: u64,
    t: Transition,
}

/// Single-threaded ring; see [`SharedReplay`] for the concurrent wrapper.
pub struct ReplayBuffer {
    slots: Vec<Slot>,
    capacity: usize,
    cursor: usize,
    next_seq: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        ReplayBuffer {
            slots: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            cursor: 0,
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes ever accepted (== the next sequence number).
    pub fn pushed(&self) -> u64 {
        self.next_seq
    }

    /// Appends one validated record, evicting the oldest when full. Returns
    /// the record's global sequence number.
    pub fn push(&mut self, t: Transition) -> Result<u64, ReplayError> {
        t.validate()?;
        let seq = self.next_seq;
        self.next_seq += 1;
        if self.slots.len() < self.capacity {
            self.slots.push(Slot { seq, t });
        } else {
            // cursor walks the ring; the slot it lands on is always the oldest
            self.slots[self.cursor] = Slot { seq, t };
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(seq)
    }

    /// `n` uniform draws with replacement, copied out.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Transition>, ReplayError> {
        if self.slots.len() < n || n == 0 {
            return Err(ReplayError::Insufficient {
                have: self.slots.len(),
                need: n.max(1),
            });
        }
        Ok((0..n)
            .map(|_| self.slots[rng.random_range(0..self.slots.len())].t.clone())
            .collect())
    }

    /// Sampling variant that also reports each record's sequence number.
    pub fn sample_with_seq(
        &self,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(u64, Transition)>, ReplayError> {
        if self.slots.len() < n || n == 0 {
            return Err(ReplayError::Insufficient {
                have: self.slots.len(),
                need: n.max(1),
            });
        }
        Ok((0..n)
            .map(|_| {
                let s = &self.slots[rng.random_range(0..self.slots.len())];
                (s.seq, s.t.clone())
            })
            .collect())
    }

    /// Sequence numbers currently held, ascending.
    pub fn held_seqs(&self) -> Vec<u64> {
        let mut seqs: Vec<u64> = self.slots.iter().map(|s| s.seq).collect();
        seqs.sort_unstable();
        seqs
    }
}

/// Mutex-guarded handle shared by workers and the learner. Every operation
/// takes the lock for its whole duration, which makes the push/sample history
/// trivially linearizable; samples are deep copies, so the learner never
/// holds references into the ring.
#[derive(Clone)]
pub struct SharedReplay {
    inner: Arc<Mutex<ReplayBuffer>>,
}

impl SharedReplay {
    pub fn new(capacity: usize) -> Self {
        SharedReplay {
            inner: Arc::new(Mutex::new(ReplayBuffer::new(capacity))),
        }
    }

    pub fn push(&self, t: Transition) -> Result<u64, ReplayError> {
        self.inner.lock().expect("replay lock").push(t)
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Transition>, ReplayError> {
        self.inner.lock().expect("replay lock").sample(n, rng)
    }

    pub fn sample_with_seq(
        &self,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(u64, Transition)>, ReplayError> {
        self.inner.lock().expect("replay lock").sample_with_seq(n, rng)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("replay lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pushed(&self) -> u64 {
        self.inner.lock().expect("replay lock").pushed()
    }

    pub fn held_seqs(&self) -> Vec<u64> {
        self.inner.lock().expect("replay lock").held_seqs()
    }
}
