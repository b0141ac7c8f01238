//! Heartbeat failure detector driven by token arrivals.

use serde::{Deserialize, Serialize};

use crate::label::ProcessorId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdParams {
    pub w: u32,
}

impl FdParams {
    pub fn new(w: u32) -> Self {
        FdParams { w: w.max(1) }
    }

    /// `W = 4n`.
    pub fn default_for(n: usize) -> Self {
        Self::new(4 * n as u32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdEvent {
    Suspect(ProcessorId),
    Trust(ProcessorId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdState {
    self_id: ProcessorId,
    params: FdParams,
    heartbeat: Vec<u32>,
    crd_of: Vec<Option<ProcessorId>>,
}

impl FdState {
    pub fn new(self_id: ProcessorId, n: usize, params: FdParams) -> Self {
        FdState {
            self_id,
            params,
            heartbeat: vec![0; n],
            crd_of: vec![None; n],
        }
    }

    /// Builds a state from raw counters, clamping every entry into `[0, W]`.
    pub fn from_parts(
        self_id: ProcessorId,
        params: FdParams,
        heartbeat: Vec<u32>,
        crd_of: Vec<Option<ProcessorId>>,
    ) -> Self {
        let mut s = FdState {
            self_id,
            params,
            heartbeat: heartbeat.into_iter().map(|h| h.min(params.w)).collect(),
            crd_of,
        };
        s.heartbeat[self_id.index()] = 0;
        s
    }

    pub fn params(&self) -> FdParams {
        self.params
    }

    pub fn heartbeat(&self) -> &[u32] {
        &self.heartbeat
    }

    pub fn is_trusted(&self, k: ProcessorId) -> bool {
        k == self.self_id || self.heartbeat[k.index()] < self.params.w
    }

    /// A token arrived from `from`, which reports `peer_crd` as its coordinator.
    pub fn fd_on_token(&mut self, from: ProcessorId, peer_crd: Option<ProcessorId>) -> Vec<FdEvent> {
        let mut ev = Vec::new();
        if from == self.self_id || from.index() >= self.heartbeat.len() {
            return ev;
        }
        for k in 0..self.heartbeat.len() {
            let pk = ProcessorId::from(k);
            if pk == self.self_id {
                continue;
            }
            let before = self.is_trusted(pk);
            if pk == from {
                self.heartbeat[k] = 0;
            } else {
                self.heartbeat[k] = (self.heartbeat[k] + 1).min(self.params.w);
            }
            match (before, self.is_trusted(pk)) {
                (true, false) => ev.push(FdEvent::Suspect(pk)),
                (false, true) => ev.push(FdEvent::Trust(pk)),
                _ => {}
            }
        }
        self.crd_of[from.index()] = peer_crd;
        ev
    }

    /// Trusted processors with the coordinator each one reported; `own_crd`
    /// is reported for self.
    pub fn fd_output(&self, own_crd: Option<ProcessorId>) -> Vec<(ProcessorId, Option<ProcessorId>)> {
        (0..self.heartbeat.len())
            .map(ProcessorId::from)
            .filter(|&k| self.is_trusted(k))
            .map(|k| {
                if k == self.self_id {
                    (k, own_crd)
                } else {
                    (k, self.crd_of[k.index()])
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_resets_sender_and_ages_others() {
        let mut fd = FdState::from_parts(ProcessorId(0), FdParams::new(5), vec![0, 3, 4], vec![None; 3]);
        let ev = fd.fd_on_token(ProcessorId(1), Some(ProcessorId(1)));
        assert_eq!(fd.heartbeat(), &[0, 0, 5]);
        assert_eq!(ev, vec![FdEvent::Suspect(ProcessorId(2))]);
        assert_eq!(
            fd.fd_output(None),
            vec![(ProcessorId(0), None), (ProcessorId(1), Some(ProcessorId(1)))]
        );
        fd.fd_on_token(ProcessorId(1), None);
        assert_eq!(fd.heartbeat(), &[0, 0, 5]);
    }

    #[test]
    fn w_one_suspects_everyone_but_the_last_sender() {
        let mut fd = FdState::new(ProcessorId(0), 4, FdParams::new(1));
        fd.fd_on_token(ProcessorId(2), None);
        let ids: Vec<_> = fd.fd_output(None).into_iter().map(|(p, _)| p.0).collect();
        assert_eq!(ids, vec![0, 2]);
    }
}
