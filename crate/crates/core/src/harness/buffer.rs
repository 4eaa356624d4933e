use serde::{Deserialize, Serialize};

use crate::dynamics::TransitionBatch;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub reward: f64,
    pub episode: usize,
    pub step: usize,
}

/// Append-only transition store; never pruned.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    items: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            items: Vec::new(),
        }
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.s.len() != self.state_dim || t.s_next.len() != self.state_dim || t.a.len() != self.action_dim {
            return Err(Error::shape("transition widths differ from the buffer's"));
        }
        self.items.push(t);
        Ok(())
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) -> Result<()> {
        for t in ts {
            self.push(t)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.items
    }

    pub fn to_batch(&self) -> Result<TransitionBatch> {
        let mut s = Vec::with_capacity(self.len() * self.state_dim);
        let mut a = Vec::with_capacity(self.len() * self.action_dim);
        let mut n = Vec::with_capacity(self.len() * self.state_dim);
        for t in &self.items {
            s.extend_from_slice(&t.s);
            a.extend_from_slice(&t.a);
            n.extend_from_slice(&t.s_next);
        }
        TransitionBatch::new(self.state_dim, self.action_dim, s, a, n)
    }

    /// `(s, a, s')` rows for the density models.
    pub fn transition_vectors(&self) -> Vec<Vec<f64>> {
        self.items
            .iter()
            .map(|t| t.s.iter().chain(&t.a).chain(&t.s_next).copied().collect())
            .collect()
    }

    pub fn episode_return(&self, episode: usize) -> f64 {
        self.items
            .iter()
            .filter(|t| t.episode == episode)
            .map(|t| t.reward)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_widths_and_builds_batches() {
        let mut b = ReplayBuffer::new(2, 1);
        let t = Transition {
            s: vec![1.0, 2.0],
            a: vec![0.5],
            s_next: vec![1.5, 2.5],
            reward: -1.0,
            episode: 0,
            step: 0,
        };
        b.push(t.clone()).unwrap();
        let mut bad = t.clone();
        bad.a = vec![];
        assert!(b.push(bad).is_err());
        let batch = b.to_batch().unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(b.transition_vectors(), vec![vec![1.0, 2.0, 0.5, 1.5, 2.5]]);
        assert_eq!(b.episode_return(0), -1.0);
    }
}
