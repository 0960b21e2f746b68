//! Experience replay with proportional prioritization.
//!
//! Transitions live in a fixed-capacity ring. Each slot carries a priority
//! `|TDE| + eps`, and a sum tree over `priority^alpha` supports sampling in
//! `O(log n)`. New transitions enter at the highest priority seen so far.

use rand::Rng;
use thiserror::Error;

use crate::percept::Observation;

/// Floor added to every priority so no transition becomes unreachable.
pub const PRIORITY_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("cannot sample from an empty replay buffer")]
    Empty,
    #[error("index {index} is out of range for a buffer holding {len} transitions")]
    InvalidIndex { index: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    /// Relative mouse position in the unit square.
    Continuous([f64; 2]),
    /// Index into the discrete action grid.
    Discrete(usize),
}

impl Action {
    pub fn continuous(self) -> Option<[f64; 2]> {
        match self {
            Action::Continuous(a) => Some(a),
            Action::Discrete(_) => None,
        }
    }

    pub fn discrete(self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(i),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: Action,
    /// Reward summed over the skipped frames.
    pub reward: f64,
    pub next_state: Observation,
    pub terminal: bool,
}

/// Binary sum tree over a power-of-two number of leaves.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, index: usize) -> f64 {
        self.nodes[self.leaves + index]
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let mut node = self.leaves + index;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass` (clamped into the tree).
    pub fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = self.nodes[2 * node];
            if mass < left || self.nodes[2 * node + 1] <= 0.0 {
                node *= 2;
            } else {
                mass -= left;
                node = 2 * node + 1;
            }
        }
        node - self.leaves
    }

    /// True when every internal node equals the sum of its children to `tol`.
    pub fn is_consistent(&self, tol: f64) -> bool {
        (1..self.leaves)
            .all(|n| (self.nodes[n] - (self.nodes[2 * n] + self.nodes[2 * n + 1])).abs() <= tol)
    }
}

/// A sampled mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    /// Importance-sampling weights, normalized so the largest is 1.
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    alpha: f64,
    items: Vec<Transition>,
    priorities: Vec<f64>,
    next: usize,
    tree: SumTree,
    max_priority: f64,
    literal_is_weights: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::InvalidParameter(
                "capacity must be positive".into(),
            ));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(ReplayError::InvalidParameter(format!(
                "alpha {alpha} must be >= 0"
            )));
        }
        Ok(Self {
            capacity,
            alpha,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            priorities: Vec::new(),
            next: 0,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
            literal_is_weights: false,
        })
    }

    /// Uses `(1 / (n * priority))^beta` as importance weight instead of the
    /// probability-based form.
    pub fn with_literal_is_weights(mut self, literal: bool) -> Self {
        self.literal_is_weights = literal;
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    pub fn priority(&self, index: usize) -> Option<f64> {
        self.priorities.get(index).copied()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Exact sampling probability of a stored transition.
    pub fn probability(&self, index: usize) -> Option<f64> {
        let total = self.tree.total();
        (index < self.len() && total > 0.0).then(|| self.tree.get(index) / total)
    }

    /// Stores a transition, evicting the oldest one once full.
    pub fn push(&mut self, transition: Transition) -> usize {
        let index = self.next;
        let priority = self.max_priority.max(PRIORITY_EPSILON);
        if index == self.items.len() {
            self.items.push(transition);
            self.priorities.push(priority);
        } else {
            self.items[index] = transition;
            self.priorities[index] = priority;
        }
        self.tree.set(index, priority.powf(self.alpha));
        self.next = (self.next + 1) % self.capacity;
        index
    }

    /// Draws `n` transitions proportionally to `priority^alpha`, one from each
    /// of `n` equal slices of the cumulative priority mass.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<Batch, ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::Empty);
        }
        if n == 0 {
            return Err(ReplayError::InvalidParameter(
                "batch size must be positive".into(),
            ));
        }
        let total = self.tree.total();
        let segment = total / n as f64;
        let len = self.items.len();
        let mut indices = Vec::with_capacity(n);
        for i in 0..n {
            let u = segment * (i as f64 + rng.gen::<f64>());
            let index = self.tree.find(u).min(len - 1);
            indices.push(index);
        }
        let mut weights: Vec<f64> = indices
            .iter()
            .map(|&i| {
                if self.literal_is_weights {
                    (1.0 / (n as f64 * self.priorities[i])).powf(beta)
                } else {
                    let p = self.tree.get(i) / total;
                    (1.0 / (len as f64 * p)).powf(beta)
                }
            })
            .collect();
        let max = weights.iter().cloned().fold(f64::MIN, f64::max);
        weights.iter_mut().for_each(|w| *w /= max);
        let transitions = indices.iter().map(|&i| self.items[i].clone()).collect();
        Ok(Batch {
            indices,
            transitions,
            weights,
        })
    }

    /// Uniform sampling with replacement; all weights are 1.
    pub fn sample_uniform<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Batch, ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::Empty);
        }
        let indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..self.items.len())).collect();
        let transitions = indices.iter().map(|&i| self.items[i].clone()).collect();
        Ok(Batch {
            indices,
            transitions,
            weights: vec![1.0; n],
        })
    }

    /// Sets `priority = |tde| + eps` for each index.
    pub fn update_priorities(
        &mut self,
        indices: &[usize],
        tdes: &[f64],
    ) -> Result<(), ReplayError> {
        if indices.len() != tdes.len() {
            return Err(ReplayError::InvalidParameter(format!(
                "{} indices but {} errors",
                indices.len(),
                tdes.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.items.len()) {
            return Err(ReplayError::InvalidIndex {
                index: bad,
                len: self.items.len(),
            });
        }
        for (&i, &tde) in indices.iter().zip(tdes) {
            let priority = tde.abs() + PRIORITY_EPSILON;
            self.priorities[i] = priority;
            self.tree.set(i, priority.powf(self.alpha));
            self.max_priority = self.max_priority.max(priority);
        }
        Ok(())
    }

    /// Replaces the stored continuous action of one transition.
    pub fn overwrite_action(&mut self, index: usize, action: [f64; 2]) -> Result<(), ReplayError> {
        let len = self.items.len();
        let item = self
            .items
            .get_mut(index)
            .ok_or(ReplayError::InvalidIndex { index, len })?;
        if !action.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(ReplayError::InvalidParameter(format!(
                "action {action:?} outside the unit square"
            )));
        }
        item.action = Action::Continuous(action);
        Ok(())
    }
}
