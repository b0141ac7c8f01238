//! The labeling protocol: every processor keeps the largest pair it knows of
//! for each peer (`max[]`) and one bounded queue of pairs per label creator,
//! and converges on a single global maximal label.
//!
//! [`PairStore`] is written once over [`Stamp`] so that the counter protocol
//! can reuse it with counters in place of labels.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::label::{cmp_label, next_label, Label, LabelOrdering, ProcessorId, SchemeParams};
use crate::queue::BoundedQueue;

/// A value that carries a label: a bare label or a counter.
pub trait Stamp: Clone + PartialEq + fmt::Debug {
    fn label(&self) -> &Label;

    /// Order between two stamps that share a label.
    fn instance_cmp(&self, other: &Self) -> Ordering;

    /// The stamp a freshly created label starts with.
    fn fresh(label: Label, owner: ProcessorId) -> Self;
}

impl Stamp for Label {
    fn label(&self) -> &Label {
        self
    }

    fn instance_cmp(&self, _other: &Self) -> Ordering {
        Ordering::Equal
    }

    fn fresh(label: Label, _owner: ProcessorId) -> Self {
        label
    }
}

/// A value together with the value that canceled it, if any.
///
/// For labels these are `ml`/`cl`; for counters `mct`/`cct`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair<T> {
    pub value: T,
    pub canceled_by: Option<T>,
}

pub type LabelPair = Pair<Label>;

impl<T: Stamp> Pair<T> {
    pub fn legit(value: T) -> Self {
        Pair {
            value,
            canceled_by: None,
        }
    }

    pub fn canceled(value: T, by: T) -> Self {
        Pair {
            value,
            canceled_by: Some(by),
        }
    }

    pub fn is_legit(&self) -> bool {
        self.canceled_by.is_none()
    }

    pub fn label(&self) -> &Label {
        self.value.label()
    }
}

/// Queue sizing for the labeling and counter protocols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub n: usize,
    pub m: usize,
    pub own_queue_cap: usize,
    pub other_queue_cap: usize,
    pub scheme: SchemeParams,
}

impl ProtocolParams {
    /// Capacity stated for the own queue in the algorithm's variables.
    pub fn declared_own_bound(n: usize, m: usize) -> usize {
        n * (n * n + m)
    }

    /// Capacity the creation-bound argument needs for the own queue.
    pub fn proven_own_bound(n: usize, m: usize) -> usize {
        2 * (m * n + 2 * n * n - 2 * n) + 1
    }

    /// Safe mode: the larger of the two own-queue bounds, `n+m` for the
    /// others, and `k` large enough to feed the whole own queue (both labels
    /// of each pair) to `next_label`.
    pub fn safe(n: usize, m: usize) -> Result<Self, crate::error::LabelError> {
        let own = Self::declared_own_bound(n, m).max(Self::proven_own_bound(n, m));
        let k = u32::try_from(2 * own).unwrap_or(u32::MAX);
        Ok(ProtocolParams {
            n,
            m,
            own_queue_cap: own,
            other_queue_cap: n + m,
            scheme: SchemeParams::new(k)?,
        })
    }

    /// Test mode: explicit capacities and `k`.
    pub fn custom(n: usize, m: usize, own_queue_cap: usize, k: u32) -> Result<Self, crate::error::LabelError> {
        Ok(ProtocolParams {
            n,
            m,
            own_queue_cap,
            other_queue_cap: n + m,
            scheme: SchemeParams::new(k)?,
        })
    }

    pub fn is_safe_mode(&self) -> bool {
        self.own_queue_cap >= Self::proven_own_bound(self.n, self.m)
            && self.scheme.k() as usize >= 2 * self.own_queue_cap
    }
}

/// Something noteworthy that happened inside one receive step.
#[derive(Clone, Debug, PartialEq)]
pub enum StoreEvent {
    /// `max[self]` took a label it did not hold before without creating it.
    Adopt(Label),
    Create(Label),
    /// `max[self]` was canceled.
    Cancel(Label),
    PurgeStale,
    /// A full queue evicted its back entry.
    Overflow {
        queue: ProcessorId,
    },
    /// `next_label` received more than `k` labels and was given a prefix.
    Oversized {
        inputs: usize,
    },
}

/// `max[]` and the per-creator queues, generic over labels and counters.
#[derive(Clone, Debug)]
pub struct PairStore<T> {
    self_id: ProcessorId,
    params: ProtocolParams,
    max: Vec<Option<Pair<T>>>,
    stored: Vec<BoundedQueue<Pair<T>>>,
}

impl<T: Stamp> PairStore<T> {
    /// Clean start: own label freshly created, everything else unknown.
    pub fn new(self_id: ProcessorId, params: ProtocolParams) -> Self {
        let mut s = Self::empty(self_id, params);
        let lbl = next_label(&params.scheme, self_id, &[]).expect("empty input");
        let p = Pair::legit(T::fresh(lbl, self_id));
        s.stored[self_id.index()].push_front(p.clone());
        s.max[self_id.index()] = Some(p);
        s
    }

    /// Builds a store from raw parts, e.g. an injected arbitrary state.
    /// Queue contents beyond capacity are truncated from the back.
    pub fn from_parts(
        self_id: ProcessorId,
        params: ProtocolParams,
        max: Vec<Option<Pair<T>>>,
        stored: Vec<Vec<Pair<T>>>,
    ) -> Self {
        let mut s = Self::empty(self_id, params);
        for (j, p) in max.into_iter().enumerate().take(params.n) {
            s.max[j] = p;
        }
        if s.max[self_id.index()].is_none() {
            let lbl = next_label(&params.scheme, self_id, &[]).expect("empty input");
            s.max[self_id.index()] = Some(Pair::legit(T::fresh(lbl, self_id)));
        }
        for (j, items) in stored.into_iter().enumerate().take(params.n) {
            let cap = s.stored[j].capacity();
            for p in items.into_iter().take(cap).rev() {
                s.stored[j].push_front(p);
            }
        }
        s
    }

    fn empty(self_id: ProcessorId, params: ProtocolParams) -> Self {
        let stored = (0..params.n)
            .map(|j| {
                BoundedQueue::new(if j == self_id.index() {
                    params.own_queue_cap
                } else {
                    params.other_queue_cap
                })
            })
            .collect();
        PairStore {
            self_id,
            params,
            max: vec![None; params.n],
            stored,
        }
    }

    pub fn self_id(&self) -> ProcessorId {
        self.self_id
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn own_max(&self) -> &Pair<T> {
        self.max[self.self_id.index()].as_ref().expect("own max is always set")
    }

    pub fn max_of(&self, j: ProcessorId) -> Option<&Pair<T>> {
        self.max.get(j.index()).and_then(|p| p.as_ref())
    }

    pub fn set_max(&mut self, j: ProcessorId, p: Pair<T>) {
        self.max[j.index()] = Some(p);
    }

    pub fn max_entries(&self) -> &[Option<Pair<T>>] {
        &self.max
    }

    pub(crate) fn max_entries_mut(&mut self) -> &mut [Option<Pair<T>>] {
        &mut self.max
    }

    pub fn queue(&self, j: ProcessorId) -> &BoundedQueue<Pair<T>> {
        &self.stored[j.index()]
    }

    pub(crate) fn queues_mut(&mut self) -> &mut [BoundedQueue<Pair<T>>] {
        &mut self.stored
    }

    /// `⟨max[self], max[to]⟩`; no state change.
    pub fn transmit(&self, to: ProcessorId) -> (Pair<T>, Option<Pair<T>>) {
        (self.own_max().clone(), self.max_of(to).cloned())
    }

    /// Misplaced pairs, two pairs with one label, or two legit pairs in a queue.
    pub fn stale_info(&self) -> bool {
        self.stored.iter().enumerate().any(|(j, q)| {
            let mut legit = 0;
            for (i, p) in q.iter().enumerate() {
                if p.label().creator().index() != j {
                    return true;
                }
                if p.is_legit() {
                    legit += 1;
                    if legit > 1 {
                        return true;
                    }
                }
                if q.iter().skip(i + 1).any(|o| o.label() == p.label()) {
                    return true;
                }
            }
            false
        })
    }

    /// Inserts `p` into its creator's queue, keeping one pair per label: a
    /// canceled instance wins over a legit one, otherwise the greater
    /// instance wins. The kept pair moves to the front.
    pub fn enqueue(&mut self, p: Pair<T>, ev: &mut Vec<StoreEvent>) {
        let c = p.label().creator();
        let Some(q) = self.stored.get_mut(c.index()) else {
            return;
        };
        match q.position(|o| o.label() == p.label()) {
            Some(i) => {
                let keep_new = prefer(&p, q.get(i).expect("found"));
                if keep_new {
                    q.replace(i, p);
                } else {
                    q.touch(i);
                }
            }
            None => {
                if q.push_front(p).is_some() {
                    ev.push(StoreEvent::Overflow { queue: c });
                }
            }
        }
    }

    /// The receive body, steps 1 to 9. Without a message, steps 1 and 2 are
    /// skipped.
    pub fn process(&mut self, msg: Option<(ProcessorId, Pair<T>, Option<Pair<T>>)>, ev: &mut Vec<StoreEvent>) {
        let me = self.self_id.index();
        let before = self.own_max().label().clone();
        let was_legit = self.own_max().is_legit();

        if let Some((from, sent_max, last_sent)) = msg {
            if from.index() < self.params.n {
                self.max[from.index()] = Some(sent_max);
            }
            if let Some(ls) = last_sent {
                if !ls.is_legit() && self.own_max().label() == ls.label() {
                    self.max[me] = Some(ls);
                }
            }
        }

        if self.stale_info() {
            for q in &mut self.stored {
                q.clear();
            }
            ev.push(StoreEvent::PurgeStale);
        }

        for j in 0..self.params.n {
            if let Some(p) = self.max[j].clone() {
                self.enqueue(p, ev);
            }
        }

        for q in &mut self.stored {
            let cancel: Vec<(usize, T)> = q
                .iter()
                .enumerate()
                .filter(|(_, lp)| lp.is_legit())
                .filter_map(|(i, lp)| {
                    q.iter()
                        .enumerate()
                        .find(|&(i2, o)| {
                            i2 != i
                                && !matches!(
                                    cmp_label(o.label(), lp.label()),
                                    LabelOrdering::Less | LabelOrdering::Equal
                                )
                        })
                        .map(|(_, o)| (i, o.value.clone()))
                })
                .collect();
            for (i, by) in cancel {
                if let Some(lp) = q.iter_mut().nth(i) {
                    lp.canceled_by = Some(by);
                }
            }
        }

        for j in 0..self.params.n {
            let Some(mj) = self.max[j].as_ref().filter(|p| !p.is_legit()).cloned() else {
                continue;
            };
            if let Some(q) = self.stored.get_mut(mj.label().creator().index()) {
                if let Some(i) = q.position(|o| o.is_legit() && o.label() == mj.label()) {
                    q.replace(i, mj);
                }
            }
        }

        for q in &mut self.stored {
            remove_doubles(q);
        }

        for j in 0..self.params.n {
            let Some(mj) = self.max[j].as_ref().filter(|p| p.is_legit()).cloned() else {
                continue;
            };
            if let Some(q) = self.stored.get_mut(mj.label().creator().index()) {
                if let Some(i) = q.position(|o| !o.is_legit() && o.label() == mj.label()) {
                    self.max[j] = q.get(i).cloned();
                    q.touch(i);
                }
            }
        }
        if was_legit && !self.own_max().is_legit() {
            ev.push(StoreEvent::Cancel(self.own_max().label().clone()));
        }

        let mut created = false;
        if let Some(best) = self.greatest_legit() {
            self.max[me] = Some(Pair::legit(best));
        } else {
            let q = &mut self.stored[me];
            if let Some(i) = q.position(|o| o.is_legit()) {
                self.max[me] = q.get(i).cloned();
                q.touch(i);
            } else {
                let mut inputs: Vec<Label> = Vec::new();
                for p in q.iter() {
                    inputs.push(p.label().clone());
                    if let Some(c) = &p.canceled_by {
                        inputs.push(c.label().clone());
                    }
                }
                inputs.dedup();
                let k = self.params.scheme.k() as usize;
                let lbl = match next_label(&self.params.scheme, self.self_id, &inputs) {
                    Ok(l) => l,
                    Err(_) => {
                        ev.push(StoreEvent::Oversized { inputs: inputs.len() });
                        let mut uniq: Vec<Label> = Vec::new();
                        for l in inputs {
                            if uniq.len() == k {
                                break;
                            }
                            if !uniq.contains(&l) {
                                uniq.push(l);
                            }
                        }
                        next_label(&self.params.scheme, self.self_id, &uniq).expect("input trimmed to k")
                    }
                };
                let p = Pair::legit(T::fresh(lbl.clone(), self.self_id));
                if q.push_front(p.clone()).is_some() {
                    ev.push(StoreEvent::Overflow { queue: self.self_id });
                }
                self.max[me] = Some(p);
                ev.push(StoreEvent::Create(lbl));
                created = true;
            }
        }
        if !created && *self.own_max().label() != before {
            ev.push(StoreEvent::Adopt(self.own_max().label().clone()));
        }
    }

    /// The greatest legit value in `max[]`; the first index wins among
    /// incomparable candidates and stamps sharing a label are ordered by
    /// [`Stamp::instance_cmp`].
    fn greatest_legit(&self) -> Option<T> {
        let mut best: Option<&T> = None;
        for p in self.max.iter().flatten().filter(|p| p.is_legit()) {
            best = match best {
                None => Some(&p.value),
                Some(b) => match cmp_label(p.label(), b.label()) {
                    LabelOrdering::Greater => Some(&p.value),
                    LabelOrdering::Equal if p.value.instance_cmp(b) == Ordering::Greater => Some(&p.value),
                    _ => Some(b),
                },
            };
        }
        best.cloned()
    }

    /// Checks the post-receive invariants: no stale information and a legit
    /// own maximum. Returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.stale_info() {
            return Err("stale information in storage".into());
        }
        if !self.own_max().is_legit() {
            return Err("own maximum is canceled".into());
        }
        Ok(())
    }
}

/// True if `new` should replace `old` for the same label.
fn prefer<T: Stamp>(new: &Pair<T>, old: &Pair<T>) -> bool {
    match (new.is_legit(), old.is_legit()) {
        (false, true) => true,
        (true, false) => false,
        _ => new.value.instance_cmp(&old.value) == Ordering::Greater,
    }
}

/// Keeps one pair per label, chosen by [`prefer`], at the position of the
/// front-most copy.
fn remove_doubles<T: Stamp>(q: &mut BoundedQueue<Pair<T>>) {
    let mut i = 0;
    while i < q.len() {
        let lbl = q.get(i).expect("in range").label().clone();
        let mut j = i + 1;
        while j < q.len() {
            if *q.get(j).expect("in range").label() == lbl {
                let dup = q.remove(j).expect("in range");
                if prefer(&dup, q.get(i).expect("in range")) {
                    if let Some(slot) = q.iter_mut().nth(i) {
                        *slot = dup;
                    }
                }
            } else {
                j += 1;
            }
        }
        i += 1;
    }
}

/// Per-processor state of the labeling protocol.
#[derive(Clone, Debug)]
pub struct LabelingState {
    store: PairStore<Label>,
}

impl LabelingState {
    pub fn new(self_id: ProcessorId, params: ProtocolParams) -> Self {
        LabelingState {
            store: PairStore::new(self_id, params),
        }
    }

    pub fn from_store(store: PairStore<Label>) -> Self {
        LabelingState { store }
    }

    pub fn store(&self) -> &PairStore<Label> {
        &self.store
    }

    pub fn stale_info(&self) -> bool {
        self.store.stale_info()
    }

    /// Handles `⟨sentMax, lastSent⟩` from `from`.
    pub fn on_receive(
        &mut self,
        from: ProcessorId,
        sent_max: LabelPair,
        last_sent: Option<LabelPair>,
    ) -> Vec<StoreEvent> {
        let scheme = self.store.params.scheme;
        let clamp = |p: LabelPair| Pair {
            value: p.value.clamp_to(&scheme),
            canceled_by: p.canceled_by.map(|c| c.clamp_to(&scheme)),
        };
        let mut ev = Vec::new();
        self.store
            .process(Some((from, clamp(sent_max), last_sent.map(clamp))), &mut ev);
        ev
    }

    pub fn on_transmit_ready(&self, to: ProcessorId) -> (LabelPair, Option<LabelPair>) {
        self.store.transmit(to)
    }

    pub fn max_label(&self) -> &Label {
        self.store.own_max().label()
    }
}
