//! Tabular Q-learning with a replay buffer.

use std::collections::{HashMap, VecDeque};
use std::hash::Hash;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ExploreError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QConfig {
    /// Learning rate, in (0, 1].
    pub alpha: f64,
    /// Discount factor, in [0, 1).
    pub gamma: f64,
    /// Exploration probability, in [0, 1].
    pub epsilon: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Reward per newly found bug site.
    pub bug_reward: f64,
    /// Reward per newly covered PM instruction site.
    pub site_reward: f64,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 0.9,
            epsilon: 0.1,
            replay_capacity: 256,
            batch_size: 8,
            seed: 0,
            bug_reward: 10.0,
            site_reward: 1.0,
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<(), ExploreError> {
        let bad = |msg: &str| Err(ExploreError::Config(msg.to_owned()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("need 1 <= batch_size <= replay_capacity");
        }
        if !(self.bug_reward.is_finite() && self.site_reward.is_finite()) {
            return bad("rewards must be finite");
        }
        Ok(())
    }
}

/// Q values keyed by (state, action); missing entries read as 0.
#[derive(Debug, Clone)]
pub struct QTable<S> {
    actions: usize,
    values: HashMap<(S, usize), f64>,
}

impl<S: Hash + Eq + Clone> QTable<S> {
    pub fn new(actions: usize) -> Self {
        assert!(actions > 0, "a Q table needs at least one action");
        Self {
            actions,
            values: HashMap::new(),
        }
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, state: &S, action: usize) -> f64 {
        self.values
            .get(&(state.clone(), action))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set(&mut self, state: S, action: usize, q: f64) {
        assert!(action < self.actions);
        self.values.insert((state, action), q);
    }

    pub fn max(&self, state: &S) -> f64 {
        (0..self.actions)
            .map(|a| self.get(state, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Best action; ties go to the smallest index.
    pub fn greedy(&self, state: &S) -> usize {
        let mut best = 0;
        for a in 1..self.actions {
            if self.get(state, a) > self.get(state, best) {
                best = a;
            }
        }
        best
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.values().copied()
    }
}

/// One Bellman update. `next` is `None` for a terminal transition, which
/// contributes no bootstrap term.
pub fn q_update<S: Hash + Eq + Clone>(
    table: &mut QTable<S>,
    state: &S,
    action: usize,
    reward: f64,
    next: Option<&S>,
    config: &QConfig,
) -> f64 {
    let old = table.get(state, action);
    let future = next.map_or(0.0, |n| table.max(n));
    let q = (1.0 - config.alpha) * old + config.alpha * (reward + config.gamma * future);
    table.set(state.clone(), action, q);
    q
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next: S,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `n` items drawn uniformly with replacement.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut impl Rng) -> Vec<&'a T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(alpha: f64, gamma: f64) -> QConfig {
        QConfig {
            alpha,
            gamma,
            ..QConfig::default()
        }
    }

    #[test]
    fn update_examples() {
        let mut t = QTable::new(2);
        t.set(0u8, 0, 5.0);
        assert_eq!(q_update(&mut t, &0, 0, 3.0, Some(&1), &cfg(1.0, 0.0)), 3.0);

        let mut t = QTable::new(2);
        t.set(1u8, 1, 2.0);
        let q = q_update(&mut t, &0, 0, 1.0, Some(&1), &cfg(0.5, 0.9));
        assert!((q - 1.4).abs() < 1e-12);
    }

    #[test]
    fn greedy_ties_pick_smallest_action() {
        let mut t = QTable::new(4);
        assert_eq!(t.greedy(&()), 0);
        t.set((), 2, 1.0);
        t.set((), 3, 1.0);
        assert_eq!(t.greedy(&()), 2);
    }

    #[test]
    fn config_ranges() {
        assert!(QConfig::default().validate().is_ok());
        assert!(cfg(0.0, 0.5).validate().is_err());
        assert!(cfg(0.5, 1.0).validate().is_err());
        let c = QConfig {
            replay_capacity: 2,
            batch_size: 4,
            ..QConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn replay_buffer_evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(b.sample(20, &mut rng).iter().all(|&&i| i >= 2));
    }
}
