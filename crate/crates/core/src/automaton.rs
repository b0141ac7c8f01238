//! A replicated append-only log whose state is a hash chain of every applied
//! composite message.

use sha2::{Digest, Sha256};

use crate::label::ProcessorId;
use crate::vs::{Automaton, Input};

/// State layout: 32-byte chain digest followed by the number of applied
/// inputs as little-endian `u64`.
#[derive(Clone, Debug)]
pub struct HashChainLog {
    owner: ProcessorId,
    next_input: u64,
    budget: Option<u64>,
    applied_inputs: u64,
}

impl HashChainLog {
    pub fn new(owner: ProcessorId) -> Self {
        HashChainLog {
            owner,
            next_input: 0,
            budget: None,
            applied_inputs: 0,
        }
    }

    /// Stops producing inputs after `budget` fetches.
    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    /// Inputs applied so far, counting re-applications for side effects.
    pub fn side_effects(&self) -> u64 {
        self.applied_inputs
    }

    pub fn chain_len(state: &[u8]) -> u64 {
        state
            .get(32..40)
            .and_then(|b| b.try_into().ok())
            .map(u64::from_le_bytes)
            .unwrap_or(0)
    }
}

impl Automaton for HashChainLog {
    fn initial_state(&self) -> Vec<u8> {
        let mut s = Sha256::digest(b"genesis").to_vec();
        s.extend_from_slice(&0u64.to_le_bytes());
        s
    }

    fn fetch(&mut self) -> Option<Input> {
        if self.budget.is_some_and(|b| self.next_input >= b) {
            return None;
        }
        let input = format!("{}:{}", self.owner, self.next_input).into_bytes();
        self.next_input += 1;
        Some(input)
    }

    fn apply(&mut self, state: &[u8], msg: &[Option<Input>]) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(state);
        let mut count = Self::chain_len(state);
        for (j, m) in msg.iter().enumerate() {
            if let Some(m) = m {
                h.update((j as u32).to_le_bytes());
                h.update((m.len() as u32).to_le_bytes());
                h.update(m);
                count += 1;
                self.applied_inputs += 1;
            }
        }
        let mut out = h.finalize().to_vec();
        out.extend_from_slice(&count.to_le_bytes());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_is_deterministic_and_ordered() {
        let mut a = HashChainLog::new(ProcessorId(0));
        let mut b = HashChainLog::new(ProcessorId(1));
        let s0 = a.initial_state();
        let msg = vec![Some(b"x".to_vec()), None, Some(b"y".to_vec())];
        let s1 = a.apply(&s0, &msg);
        assert_eq!(s1, b.apply(&s0, &msg));
        assert_eq!(HashChainLog::chain_len(&s1), 2);
        let swapped = vec![Some(b"y".to_vec()), None, Some(b"x".to_vec())];
        assert_ne!(s1, a.apply(&s0, &swapped));
    }

    #[test]
    fn fetch_respects_budget() {
        let mut a = HashChainLog::new(ProcessorId(3)).with_budget(2);
        assert_eq!(a.fetch(), Some(b"3:0".to_vec()));
        assert_eq!(a.fetch(), Some(b"3:1".to_vec()));
        assert_eq!(a.fetch(), None);
    }
}
