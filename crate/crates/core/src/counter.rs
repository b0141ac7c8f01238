//! Practically unbounded multi-writer counters `⟨lbl, seqn, wid⟩` on top of
//! the labeling protocol, quorum-based increments, and a multi-writer
//! multi-reader register built from them.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::label::{cmp_label, Label, LabelOrdering, ProcessorId};
use crate::labeling::{Pair, PairStore, ProtocolParams, Stamp, StoreEvent};
use crate::queue::BoundedQueue;

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counter {
    pub lbl: Label,
    pub seqn: u128,
    pub wid: ProcessorId,
}

impl Counter {
    pub fn new(lbl: Label, seqn: u128, wid: ProcessorId) -> Self {
        Counter { lbl, seqn, wid }
    }
}

impl fmt::Debug for Counter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨{:?}, {}, {}⟩", self.lbl, self.seqn, self.wid)
    }
}

impl fmt::Display for Counter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.lbl, self.seqn, self.wid)
    }
}

impl Stamp for Counter {
    fn label(&self) -> &Label {
        &self.lbl
    }

    fn instance_cmp(&self, other: &Self) -> Ordering {
        (self.seqn, self.wid).cmp(&(other.seqn, other.wid))
    }

    fn fresh(label: Label, owner: ProcessorId) -> Self {
        Counter::new(label, 0, owner)
    }
}

pub type CounterPair = Pair<Counter>;

/// The `≺_ct` relation: label first, then sequence number, then writer id.
pub fn cmp_counter(a: &Counter, b: &Counter) -> LabelOrdering {
    match cmp_label(&a.lbl, &b.lbl) {
        LabelOrdering::Equal => match a.instance_cmp(b) {
            Ordering::Less => LabelOrdering::Less,
            Ordering::Greater => LabelOrdering::Greater,
            Ordering::Equal => LabelOrdering::Equal,
        },
        o => o,
    }
}

/// Sequence number at which a counter counts as exhausted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExhaustionThreshold(u128);

impl ExhaustionThreshold {
    pub fn new(limit: u128) -> Option<Self> {
        (limit >= 2).then_some(ExhaustionThreshold(limit))
    }

    pub fn limit(&self) -> u128 {
        self.0
    }
}

impl Default for ExhaustionThreshold {
    fn default() -> Self {
        ExhaustionThreshold(1u128 << 64)
    }
}

pub fn exhausted(pair: &CounterPair, t: ExhaustionThreshold) -> bool {
    pair.value.seqn >= t.0
}

/// Cancels `pair` by itself if it is legit and exhausted.
pub fn cancel_exhausted(pair: &mut CounterPair, t: ExhaustionThreshold) -> bool {
    if pair.is_legit() && exhausted(pair, t) {
        pair.canceled_by = Some(pair.value.clone());
        true
    } else {
        false
    }
}

/// Queue insertion with the counter rules: one pair per label, canceled
/// wins over legit, otherwise the greater `⟨seqn, wid⟩` wins.
pub fn enqueue(queue: &mut BoundedQueue<CounterPair>, pair: CounterPair) -> bool {
    match queue.position(|o| o.label() == pair.label()) {
        Some(i) => {
            let old = queue.get(i).expect("found");
            let take = match (pair.is_legit(), old.is_legit()) {
                (false, true) => true,
                (true, false) => false,
                _ => pair.value.instance_cmp(&old.value) == Ordering::Greater,
            };
            if take {
                queue.replace(i, pair);
            } else {
                queue.touch(i);
            }
            false
        }
        None => queue.push_front(pair).is_some(),
    }
}

/// A family of processor sets where every two members intersect.
pub trait QuorumSystem: fmt::Debug + Send + Sync {
    fn is_quorum(&self, members: &BTreeSet<ProcessorId>) -> bool;
}

/// Any `⌊n/2⌋+1` processors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Majority {
    pub n: usize,
}

impl QuorumSystem for Majority {
    fn is_quorum(&self, members: &BTreeSet<ProcessorId>) -> bool {
        members.iter().filter(|p| p.index() < self.n).count() > self.n / 2
    }
}

/// Register contents as seen by one processor: a written counter and the
/// bytes that came with it.
pub type Written = (Counter, Vec<u8>);

/// Wire records of the counter protocol.
#[derive(Clone, Debug, PartialEq)]
pub enum CounterMsg {
    Diffuse {
        sent_max: CounterPair,
        last_sent: Option<CounterPair>,
    },
    QuorumRead {
        nonce: u64,
    },
    ReadReply {
        nonce: u64,
        pair: CounterPair,
        value: Option<Written>,
    },
    QuorumWrite {
        nonce: u64,
        counter: Counter,
        value: Option<Vec<u8>>,
    },
    WriteAck {
        nonce: u64,
    },
}

impl CounterMsg {
    /// Number of counter pairs the record carries.
    pub fn pair_count(&self) -> usize {
        match self {
            CounterMsg::Diffuse { .. } => 2,
            CounterMsg::ReadReply { .. } | CounterMsg::QuorumWrite { .. } => 1,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpKind {
    Increment,
    Write(Vec<u8>),
    Read,
}

#[derive(Clone, Debug)]
enum Phase {
    Reading {
        nonce: u64,
        responded: BTreeSet<ProcessorId>,
        values: Vec<Written>,
    },
    Writing {
        nonce: u64,
        counter: Counter,
        value: Option<Vec<u8>>,
        acked: BTreeSet<ProcessorId>,
    },
}

#[derive(Clone, Debug)]
struct PendingOp {
    id: u64,
    kind: OpKind,
    phase: Phase,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpResult {
    Incremented(Counter),
    Written(Counter),
    /// `None` when the replies showed no single maximal label.
    Read(Option<Written>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpOutcome {
    pub id: u64,
    pub result: OpResult,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("an operation is already in progress")]
pub struct Busy;

/// Per-processor counter protocol state.
#[derive(Clone, Debug)]
pub struct CounterState {
    store: PairStore<Counter>,
    threshold: ExhaustionThreshold,
    quorum: Arc<dyn QuorumSystem>,
    written: BoundedQueue<Written>,
    op: Option<PendingOp>,
    done: Option<OpOutcome>,
    next_nonce: u64,
    next_op: u64,
}

const WRITTEN_SLOTS: usize = 8;

impl CounterState {
    pub fn new(self_id: ProcessorId, params: ProtocolParams, threshold: ExhaustionThreshold) -> Self {
        Self::from_store(PairStore::new(self_id, params), threshold, 0)
    }

    pub fn from_store(store: PairStore<Counter>, threshold: ExhaustionThreshold, nonce_seed: u64) -> Self {
        let n = store.params().n;
        CounterState {
            store,
            threshold,
            quorum: Arc::new(Majority { n }),
            written: BoundedQueue::new(WRITTEN_SLOTS),
            op: None,
            done: None,
            next_nonce: nonce_seed,
            next_op: 0,
        }
    }

    pub fn with_quorum(mut self, q: Arc<dyn QuorumSystem>) -> Self {
        self.quorum = q;
        self
    }

    pub fn set_written(&mut self, entries: Vec<Written>) {
        self.written.clear();
        for w in entries.into_iter().rev() {
            self.written.push_front(w);
        }
    }

    pub fn store(&self) -> &PairStore<Counter> {
        &self.store
    }

    pub fn threshold(&self) -> ExhaustionThreshold {
        self.threshold
    }

    pub fn self_id(&self) -> ProcessorId {
        self.store.self_id()
    }

    fn n(&self) -> usize {
        self.store.params().n
    }

    pub fn own_max(&self) -> &CounterPair {
        self.store.own_max()
    }

    pub fn is_busy(&self) -> bool {
        self.op.is_some()
    }

    pub fn take_completed(&mut self) -> Option<OpOutcome> {
        self.done.take()
    }

    /// Drops the pending operation, if any.
    pub fn abandon(&mut self) {
        self.op = None;
    }

    pub fn diffuse_to(&self, to: ProcessorId) -> CounterMsg {
        let (sent_max, last_sent) = self.store.transmit(to);
        CounterMsg::Diffuse { sent_max, last_sent }
    }

    fn clamp(&self, mut p: CounterPair) -> CounterPair {
        let scheme = self.store.params().scheme;
        p.value.lbl = p.value.lbl.clamp_to(&scheme);
        if let Some(c) = p.canceled_by.as_mut() {
            c.lbl = c.lbl.clamp_to(&scheme);
        }
        p
    }

    fn cancel_exhausted_max(&mut self) {
        let t = self.threshold;
        for p in self.store.max_entries_mut().iter_mut().flatten() {
            cancel_exhausted(p, t);
        }
    }

    /// Background receive of `⟨sentMax, lastSent⟩`.
    pub fn on_receive_counter(
        &mut self,
        from: ProcessorId,
        sent_max: CounterPair,
        last_sent: Option<CounterPair>,
        ev: &mut Vec<StoreEvent>,
    ) {
        let t = self.threshold;
        for q in self.store.queues_mut() {
            for p in q.iter_mut() {
                cancel_exhausted(p, t);
            }
        }
        let mut sent_max = self.clamp(sent_max);
        cancel_exhausted(&mut sent_max, t);
        let last_sent = last_sent.map(|p| {
            let mut p = self.clamp(p);
            cancel_exhausted(&mut p, t);
            p
        });
        self.cancel_exhausted_max();
        self.store.process(Some((from, sent_max, last_sent)), ev);
    }

    /// Runs `process()` without a message.
    pub fn process(&mut self, ev: &mut Vec<StoreEvent>) {
        self.store.process(None, ev);
    }

    pub fn find_max_counter(&mut self, ev: &mut Vec<StoreEvent>) {
        self.cancel_exhausted_max();
        self.store.process(None, ev);
        if let Some(best) = self.max_seq() {
            self.store.set_max(self.self_id(), Pair::legit(best));
        }
    }

    /// Greatest `⟨seqn, wid⟩` among legit entries sharing `max[self]`'s label.
    fn max_seq(&self) -> Option<Counter> {
        let lbl = self.store.own_max().label();
        self.store
            .max_entries()
            .iter()
            .flatten()
            .filter(|p| p.is_legit() && p.label() == lbl)
            .map(|p| &p.value)
            .max_by(|a, b| a.instance_cmp(b))
            .cloned()
    }

    pub fn on_quorum_max_read(&mut self, ev: &mut Vec<StoreEvent>) -> CounterPair {
        self.find_max_counter(ev);
        self.store.own_max().clone()
    }

    pub fn on_quorum_max_write(
        &mut self,
        from: ProcessorId,
        candidate: Counter,
        value: Option<Vec<u8>>,
        ev: &mut Vec<StoreEvent>,
    ) {
        let scheme = self.store.params().scheme;
        let mut candidate = candidate;
        candidate.lbl = candidate.lbl.clamp_to(&scheme);
        if from.index() >= self.n() {
            return;
        }
        let keep_old = self.store.max_of(from).is_some_and(|old| {
            matches!(
                cmp_counter(&old.value, &candidate),
                LabelOrdering::Greater | LabelOrdering::Equal
            )
        });
        if !keep_old {
            self.store.set_max(from, Pair::legit(candidate.clone()));
        }
        if candidate.lbl.creator() == self.self_id() {
            let own = self.store.own_max().clone();
            let me = self.self_id().index();
            if enqueue(&mut self.store.queues_mut()[me], own) {
                ev.push(StoreEvent::Overflow { queue: self.self_id() });
            }
        }
        let t = self.threshold;
        if let Some(p) = self.store.max_entries_mut()[from.index()].as_mut() {
            cancel_exhausted(p, t);
        }
        if let Some(v) = value {
            self.remember_written(candidate, v);
        }
    }

    fn remember_written(&mut self, counter: Counter, value: Vec<u8>) {
        match self.written.position(|(c, _)| c.lbl == counter.lbl) {
            Some(i) => {
                let old = &self.written.get(i).expect("found").0;
                if counter.instance_cmp(old) == Ordering::Greater {
                    self.written.replace(i, (counter, value));
                } else {
                    self.written.touch(i);
                }
            }
            None => {
                self.written.push_front((counter, value));
            }
        }
    }

    fn written_for(&self, lbl: &Label) -> Option<&Written> {
        self.written.iter().find(|(c, _)| &c.lbl == lbl)
    }

    fn broadcast(&self, msg: CounterMsg, skip: &BTreeSet<ProcessorId>, out: &mut Vec<(ProcessorId, CounterMsg)>) {
        for j in (0..self.n()).map(ProcessorId::from) {
            if j != self.self_id() && !skip.contains(&j) {
                out.push((j, msg.clone()));
            }
        }
    }

    fn begin(
        &mut self,
        kind: OpKind,
        out: &mut Vec<(ProcessorId, CounterMsg)>,
        ev: &mut Vec<StoreEvent>,
    ) -> Result<u64, Busy> {
        if self.op.is_some() {
            return Err(Busy);
        }
        let id = self.next_op;
        self.next_op += 1;
        let nonce = self.fresh_nonce();
        let own = self.on_quorum_max_read(ev);
        let mut values = Vec::new();
        if let Some(w) = self.written_for(own.label()) {
            values.push(w.clone());
        }
        let responded: BTreeSet<ProcessorId> = [self.self_id()].into();
        self.broadcast(CounterMsg::QuorumRead { nonce }, &responded, out);
        self.op = Some(PendingOp {
            id,
            kind,
            phase: Phase::Reading {
                nonce,
                responded,
                values,
            },
        });
        self.advance(out, ev);
        Ok(id)
    }

    pub fn start_increment(
        &mut self,
        out: &mut Vec<(ProcessorId, CounterMsg)>,
        ev: &mut Vec<StoreEvent>,
    ) -> Result<u64, Busy> {
        self.begin(OpKind::Increment, out, ev)
    }

    pub fn start_write(
        &mut self,
        value: Vec<u8>,
        out: &mut Vec<(ProcessorId, CounterMsg)>,
        ev: &mut Vec<StoreEvent>,
    ) -> Result<u64, Busy> {
        self.begin(OpKind::Write(value), out, ev)
    }

    pub fn start_read(
        &mut self,
        out: &mut Vec<(ProcessorId, CounterMsg)>,
        ev: &mut Vec<StoreEvent>,
    ) -> Result<u64, Busy> {
        self.begin(OpKind::Read, out, ev)
    }

    fn fresh_nonce(&mut self) -> u64 {
        self.next_nonce = self.next_nonce.wrapping_add(1);
        self.next_nonce
    }

    /// Re-sends the pending request to every processor that has not answered.
    pub fn on_tick(&self, out: &mut Vec<(ProcessorId, CounterMsg)>) {
        let Some(op) = &self.op else { return };
        match &op.phase {
            Phase::Reading { nonce, responded, .. } => {
                self.broadcast(CounterMsg::QuorumRead { nonce: *nonce }, responded, out)
            }
            Phase::Writing {
                nonce,
                counter,
                value,
                acked,
            } => self.broadcast(
                CounterMsg::QuorumWrite {
                    nonce: *nonce,
                    counter: counter.clone(),
                    value: value.clone(),
                },
                acked,
                out,
            ),
        }
    }

    pub fn on_message(
        &mut self,
        from: ProcessorId,
        msg: CounterMsg,
        out: &mut Vec<(ProcessorId, CounterMsg)>,
        ev: &mut Vec<StoreEvent>,
    ) {
        if from.index() >= self.n() || from == self.self_id() {
            return;
        }
        match msg {
            CounterMsg::Diffuse { sent_max, last_sent } => self.on_receive_counter(from, sent_max, last_sent, ev),
            CounterMsg::QuorumRead { nonce } => {
                let pair = self.on_quorum_max_read(ev);
                let value = self.written_for(pair.label()).cloned();
                out.push((from, CounterMsg::ReadReply { nonce, pair, value }));
            }
            CounterMsg::QuorumWrite { nonce, counter, value } => {
                self.on_quorum_max_write(from, counter, value, ev);
                out.push((from, CounterMsg::WriteAck { nonce }));
            }
            CounterMsg::ReadReply { nonce, pair, value } => {
                let pair = self.clamp(pair);
                if let Some(PendingOp {
                    phase:
                        Phase::Reading {
                            nonce: want,
                            responded,
                            values,
                        },
                    ..
                }) = self.op.as_mut()
                {
                    if *want == nonce && responded.insert(from) {
                        self.store.set_max(from, pair);
                        if let Some(w) = value {
                            values.push(w);
                        }
                        self.advance(out, ev);
                    }
                }
            }
            CounterMsg::WriteAck { nonce } => {
                if let Some(PendingOp {
                    phase: Phase::Writing { nonce: want, acked, .. },
                    ..
                }) = self.op.as_mut()
                {
                    if *want == nonce && acked.insert(from) {
                        self.advance(out, ev);
                    }
                }
            }
        }
    }

    fn advance(&mut self, out: &mut Vec<(ProcessorId, CounterMsg)>, ev: &mut Vec<StoreEvent>) {
        let Some(op) = self.op.take() else { return };
        match op.phase {
            Phase::Reading {
                nonce,
                responded,
                values,
            } => {
                if !self.quorum.is_quorum(&responded) {
                    self.op = Some(PendingOp {
                        phase: Phase::Reading {
                            nonce,
                            responded,
                            values,
                        },
                        ..op
                    });
                    return;
                }
                let (counter, value) = match &op.kind {
                    OpKind::Read => match self.read_choice(&responded, &values, ev) {
                        Some((c, v)) => (c, Some(v)),
                        None => {
                            self.done = Some(OpOutcome {
                                id: op.id,
                                result: OpResult::Read(None),
                            });
                            return;
                        }
                    },
                    kind => {
                        for _ in 0..4 {
                            self.find_max_counter(ev);
                            let own = self.store.own_max();
                            if own.is_legit() && !exhausted(own, self.threshold) {
                                break;
                            }
                        }
                        let own = &self.store.own_max().value;
                        let next = Counter::new(own.lbl.clone(), own.seqn + 1, self.self_id());
                        let value = match kind {
                            OpKind::Write(v) => Some(v.clone()),
                            _ => None,
                        };
                        (next, value)
                    }
                };
                let nonce = self.fresh_nonce();
                let me = self.self_id();
                self.on_quorum_max_write(me, counter.clone(), value.clone(), ev);
                let acked: BTreeSet<ProcessorId> = [me].into();
                self.broadcast(
                    CounterMsg::QuorumWrite {
                        nonce,
                        counter: counter.clone(),
                        value: value.clone(),
                    },
                    &acked,
                    out,
                );
                self.op = Some(PendingOp {
                    phase: Phase::Writing {
                        nonce,
                        counter,
                        value,
                        acked,
                    },
                    ..op
                });
                self.advance(out, ev);
            }
            Phase::Writing {
                nonce,
                counter,
                value,
                acked,
            } => {
                if !self.quorum.is_quorum(&acked) {
                    self.op = Some(PendingOp {
                        phase: Phase::Writing {
                            nonce,
                            counter,
                            value,
                            acked,
                        },
                        ..op
                    });
                    return;
                }
                let result = match op.kind {
                    OpKind::Read => OpResult::Read(Some((counter, value.unwrap_or_default()))),
                    kind => {
                        let me = self.self_id();
                        self.store.set_max(me, Pair::legit(counter.clone()));
                        let own = self.store.own_max().clone();
                        let q = &mut self.store.queues_mut()[counter.lbl.creator().index()];
                        if enqueue(q, own) {
                            ev.push(StoreEvent::Overflow {
                                queue: counter.lbl.creator(),
                            });
                        }
                        match kind {
                            OpKind::Write(_) => OpResult::Written(counter),
                            _ => OpResult::Incremented(counter),
                        }
                    }
                };
                self.done = Some(OpOutcome { id: op.id, result });
            }
        }
    }

    /// The value a read returns: the greatest written entry under the
    /// current maximal label, or `⟨label, 0, creator⟩` with an empty value if
    /// nothing was written under it. `None` if the queried processors do
    /// not agree on one maximal label.
    fn read_choice(
        &mut self,
        responded: &BTreeSet<ProcessorId>,
        values: &[Written],
        ev: &mut Vec<StoreEvent>,
    ) -> Option<Written> {
        self.find_max_counter(ev);
        let own = self.store.own_max().value.clone();
        let agreed = responded
            .iter()
            .filter_map(|&j| self.store.max_of(j))
            .filter(|p| p.is_legit())
            .all(|p| p.label() == &own.lbl);
        if !agreed {
            return None;
        }
        let best = values
            .iter()
            .chain(self.written_for(&own.lbl))
            .filter(|(c, _)| c.lbl == own.lbl)
            .max_by(|a, b| a.0.instance_cmp(&b.0))
            .cloned();
        // Not maxC[self]: it may belong to a write whose value has not
        // reached this quorum yet.
        let creator = own.lbl.creator();
        Some(best.unwrap_or_else(|| (Counter::new(own.lbl, 0, creator), Vec::new())))
    }
}
