//! Arbitrary (transient-fault) state generation.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::counter::{Counter, CounterMsg, CounterPair, Written};
use crate::fd::{FdParams, FdState};
use crate::label::{next_label, Label, ProcessorId, SchemeParams};
use crate::labeling::{LabelPair, Pair, PairStore, ProtocolParams, Stamp};
use crate::link::{LinkState, Packet, PacketKind};
use crate::sim::config::ArbitraryBounds;
use crate::vs::{Replica, Status, View};

pub struct Garbage<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub n: usize,
    pub params: ProtocolParams,
    pub bounds: ArbitraryBounds,
    pub threshold: u128,
    cycle: Vec<Label>,
}

impl<'a> Garbage<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng, params: ProtocolParams, bounds: ArbitraryBounds, threshold: u128) -> Self {
        let cycle = if bounds.label_cycle {
            let c = ProcessorId(rng.gen_range(0..params.n as u32));
            cycle_labels(&params.scheme, c)
        } else {
            Vec::new()
        };
        Garbage {
            rng,
            n: params.n,
            params,
            bounds,
            threshold,
            cycle,
        }
    }

    fn scheme(&self) -> SchemeParams {
        self.params.scheme
    }

    pub fn pid(&mut self) -> ProcessorId {
        ProcessorId(self.rng.gen_range(0..self.n as u32))
    }

    /// Mostly independent random labels, plus copies of the labels a clean
    /// start would create and members of a planted ordering cycle.
    pub fn label(&mut self) -> Label {
        let s = self.scheme();
        let creator = self.pid();
        match self.rng.gen_range(0..8) {
            0 => next_label(&s, creator, &[]).expect("empty input"),
            1 if !self.cycle.is_empty() => {
                let i = self.rng.gen_range(0..self.cycle.len());
                self.cycle[i].clone()
            }
            _ => {
                let d = s.domain_size() as usize;
                let k = s.k() as usize;
                let sting = self.rng.gen_range(1..=s.domain_size());
                let anti: Vec<u32> = sample(self.rng, d, k).into_iter().map(|x| x as u32 + 1).collect();
                Label::normalized(&s, creator, sting, anti)
            }
        }
    }

    fn canceler_for(&mut self, l: &Label) -> Option<Label> {
        if !self.rng.gen_bool(0.3) {
            return None;
        }
        let s = self.scheme();
        let c = self.label();
        // Half of the time a label that really cancels `l`.
        Some(if self.rng.gen_bool(0.5) {
            let mut anti: Vec<u32> = c.antistings().to_vec();
            anti.pop();
            anti.push(l.sting());
            Label::normalized(&s, l.creator(), c.sting(), anti)
        } else {
            c
        })
    }

    pub fn label_pair(&mut self) -> LabelPair {
        let l = self.label();
        match self.canceler_for(&l) {
            Some(c) => Pair::canceled(l, c),
            None => Pair::legit(l),
        }
    }

    pub fn seqn(&mut self) -> u128 {
        let t = self.threshold;
        if self.bounds.exhaust_all || self.rng.gen_bool(self.bounds.exhausted_ratio) {
            t + self.rng.gen_range(0..1000)
        } else {
            self.rng.gen_range(0..t.min(1000))
        }
    }

    pub fn counter(&mut self) -> Counter {
        let l = self.label();
        let s = self.seqn();
        let w = self.pid();
        Counter::new(l, s, w)
    }

    pub fn counter_pair(&mut self) -> CounterPair {
        let c = self.counter();
        match self.canceler_for(&c.lbl) {
            Some(l) => {
                let by = Counter::new(l, self.seqn(), self.pid());
                Pair::canceled(c, by)
            }
            None => Pair::legit(c),
        }
    }

    fn store<T: Stamp>(&mut self, me: ProcessorId, mut gen: impl FnMut(&mut Self) -> Pair<T>) -> PairStore<T> {
        let max = (0..self.n)
            .map(|_| if self.rng.gen_bool(0.9) { Some(gen(self)) } else { None })
            .collect();
        let stored = (0..self.n)
            .map(|_| {
                let fill = self.rng.gen_range(0..=self.bounds.max_queue_fill);
                (0..fill).map(|_| gen(self)).collect()
            })
            .collect();
        PairStore::from_parts(me, self.params, max, stored)
    }

    pub fn label_store(&mut self, me: ProcessorId) -> PairStore<Label> {
        self.store(me, |g| g.label_pair())
    }

    pub fn counter_store(&mut self, me: ProcessorId) -> PairStore<Counter> {
        self.store(me, |g| g.counter_pair())
    }

    pub fn written(&mut self) -> Vec<Written> {
        let k = self.rng.gen_range(0..=3);
        (0..k).map(|_| (self.counter(), self.bytes(8))).collect()
    }

    pub fn bytes(&mut self, max: usize) -> Vec<u8> {
        let len = self.rng.gen_range(0..=max);
        (0..len).map(|_| self.rng.gen()).collect()
    }

    pub fn counter_msg(&mut self, quorum_lane: bool) -> CounterMsg {
        if !quorum_lane {
            return CounterMsg::Diffuse {
                sent_max: self.counter_pair(),
                last_sent: self.rng.gen_bool(0.8).then(|| self.counter_pair()),
            };
        }
        let nonce = self.rng.gen_range(0..64);
        match self.rng.gen_range(0..4) {
            0 => CounterMsg::QuorumRead { nonce },
            1 => CounterMsg::ReadReply {
                nonce,
                pair: self.counter_pair(),
                value: self.rng.gen_bool(0.5).then(|| (self.counter(), self.bytes(8))),
            },
            2 => CounterMsg::QuorumWrite {
                nonce,
                counter: self.counter(),
                value: self.rng.gen_bool(0.5).then(|| self.bytes(8)),
            },
            _ => CounterMsg::WriteAck { nonce },
        }
    }

    pub fn link(&mut self, mut s: LinkState) -> LinkState {
        let c = s.params.capacity;
        s.alt_index = self.rng.gen_range(0..s.params.tag_space());
        s.ack_count = self.rng.gen_range(0..=c);
        s.outbound = self.bytes(8);
        s.delivered_tag = self
            .rng
            .gen_bool(0.8)
            .then(|| self.rng.gen_range(0..s.params.tag_space()));
        s.holding_token = self.rng.gen_bool(0.5);
        s
    }

    pub fn packet(&mut self, tag_space: u8) -> Packet {
        Packet {
            tag: self.rng.gen_range(0..tag_space),
            kind: if self.rng.gen_bool(0.5) {
                PacketKind::Data
            } else {
                PacketKind::Ack
            },
            payload: self.bytes(8),
        }
    }

    pub fn fd(&mut self, me: ProcessorId, params: FdParams) -> FdState {
        let hb = (0..self.n).map(|_| self.rng.gen_range(0..=params.w)).collect();
        let crd = (0..self.n)
            .map(|_| self.rng.gen_bool(0.7).then(|| self.pid()))
            .collect();
        FdState::from_parts(me, params, hb, crd)
    }

    pub fn pid_set(&mut self) -> BTreeSet<ProcessorId> {
        (0..self.n as u32)
            .filter(|_| self.rng.gen_bool(0.6))
            .map(ProcessorId)
            .collect()
    }

    pub fn view(&mut self) -> View {
        View {
            id: self.rng.gen_bool(0.8).then(|| self.counter()),
            set: self.pid_set(),
        }
    }

    pub fn replica(&mut self) -> Replica {
        let view = self.view();
        // Sometimes a record that looks like a settled view.
        let prop_v = if self.rng.gen_bool(0.5) {
            view.clone()
        } else {
            self.view()
        };
        Replica {
            view,
            status: match self.rng.gen_range(0..3) {
                0 => Status::Multicast,
                1 => Status::Propose,
                _ => Status::Install,
            },
            rnd: self.rng.gen_range(0..100),
            state: self.rng.gen_bool(0.8).then(|| self.bytes(40)),
            msg: (0..self.n)
                .map(|_| self.rng.gen_bool(0.5).then(|| self.bytes(6)))
                .collect(),
            input: self.rng.gen_bool(0.5).then(|| self.bytes(6)),
            prop_v,
            no_crd: self.rng.gen_bool(0.5),
            fd: self.pid_set(),
        }
    }
}

/// Three labels of `creator` with `a ≺ b ≺ c ≺ a`.
pub fn cycle_labels(s: &SchemeParams, creator: ProcessorId) -> Vec<Label> {
    let d = s.domain_size();
    if d < 8 {
        return Vec::new();
    }
    let (x, y, z) = (d - 2, d - 1, d);
    vec![
        Label::normalized(s, creator, x, [z]),
        Label::normalized(s, creator, y, [x]),
        Label::normalized(s, creator, z, [y]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::{cmp_label, LabelOrdering};

    #[test]
    fn planted_cycle_is_a_cycle() {
        let s = SchemeParams::new(4).unwrap();
        let c = cycle_labels(&s, ProcessorId(1));
        assert_eq!(cmp_label(&c[0], &c[1]), LabelOrdering::Less);
        assert_eq!(cmp_label(&c[1], &c[2]), LabelOrdering::Less);
        assert_eq!(cmp_label(&c[2], &c[0]), LabelOrdering::Less);
    }
}
