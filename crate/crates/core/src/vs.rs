//! Coordinator-based virtual synchrony and state machine replication.
//!
//! Each processor keeps a replica record for every processor (`rep[]`); its
//! own record is what it multicasts. A processor proposes a view when it
//! sees no valid coordinator (or, as coordinator, sees the failure detector
//! drift from its view), the coordinator drives Propose → Install →
//! Multicast rounds, and followers copy the coordinator's record.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::counter::{cmp_counter, Counter};
use crate::label::{LabelOrdering, ProcessorId};

pub type ViewId = Counter;
pub type Input = Vec<u8>;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct View {
    /// `None` before any view was ever proposed.
    pub id: Option<ViewId>,
    pub set: BTreeSet<ProcessorId>,
}

impl View {
    pub fn creator(&self) -> Option<ProcessorId> {
        self.id.as_ref().map(|c| c.wid)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    #[default]
    Multicast,
    Propose,
    Install,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replica {
    pub view: View,
    pub status: Status,
    pub rnd: u128,
    /// `None` when blanked for periodic consistency enforcement.
    pub state: Option<Vec<u8>>,
    pub msg: Vec<Option<Input>>,
    pub input: Option<Input>,
    pub prop_v: View,
    pub no_crd: bool,
    pub fd: BTreeSet<ProcessorId>,
}

impl Replica {
    pub fn initial(n: usize, state: Vec<u8>) -> Self {
        Replica {
            state: Some(state),
            msg: vec![None; n],
            no_crd: true,
            ..Default::default()
        }
    }

    fn same_round(&self, other: &Replica) -> bool {
        self.view == other.view && self.status == other.status && self.rnd == other.rnd
    }
}

/// The replicated automaton.
pub trait Automaton {
    fn initial_state(&self) -> Vec<u8>;

    /// Next input to multicast, or `None` if there is none.
    fn fetch(&mut self) -> Option<Input>;

    /// Applies one composite message (inputs in ascending processor order)
    /// and returns the new state. Side effects are the implementor's.
    fn apply(&mut self, state: &[u8], msg: &[Option<Input>]) -> Vec<u8>;

    fn synch_state(&self, rep: &[Replica], members: &BTreeSet<ProcessorId>, me: ProcessorId) -> Option<Vec<u8>> {
        default_synch_state(rep, members, me)
    }

    fn synch_msgs(
        &self,
        rep: &[Replica],
        members: &BTreeSet<ProcessorId>,
        me: ProcessorId,
    ) -> Option<Vec<Option<Input>>> {
        default_synch_msgs(rep, members, me)
    }
}

/// The member whose `(view.ID, rnd)` is greatest among those holding a
/// state; ties go to `me`, then to the lowest id.
pub fn most_advanced(rep: &[Replica], members: &BTreeSet<ProcessorId>, me: ProcessorId) -> Option<ProcessorId> {
    let mut order: Vec<ProcessorId> = members.iter().copied().filter(|j| j.index() < rep.len()).collect();
    if let Some(pos) = order.iter().position(|&j| j == me) {
        order.remove(pos);
        order.insert(0, me);
    }
    let mut best: Option<ProcessorId> = None;
    for j in order {
        let r = &rep[j.index()];
        if r.state.is_none() {
            continue;
        }
        let Some(b) = best else {
            best = Some(j);
            continue;
        };
        let rb = &rep[b.index()];
        let ahead = match (&r.view.id, &rb.view.id) {
            (Some(a), Some(c)) => match cmp_counter(a, c) {
                LabelOrdering::Greater => true,
                LabelOrdering::Equal => r.rnd > rb.rnd,
                _ => false,
            },
            (Some(_), None) => true,
            (None, None) => r.rnd > rb.rnd,
            (None, Some(_)) => false,
        };
        if ahead {
            best = Some(j);
        }
    }
    best
}

pub fn default_synch_state(rep: &[Replica], members: &BTreeSet<ProcessorId>, me: ProcessorId) -> Option<Vec<u8>> {
    most_advanced(rep, members, me).and_then(|j| rep[j.index()].state.clone())
}

pub fn default_synch_msgs(
    rep: &[Replica],
    members: &BTreeSet<ProcessorId>,
    me: ProcessorId,
) -> Option<Vec<Option<Input>>> {
    most_advanced(rep, members, me).map(|j| rep[j.index()].msg.clone())
}

/// Access to the counter increment used for view identifiers.
pub trait IncrementService {
    /// Starts an increment if none is running; returns a counter once one
    /// has completed.
    fn poll_inc(&mut self) -> Option<Counter>;

    /// Drops a running or completed increment.
    fn cancel_inc(&mut self);
}

#[derive(Clone, Debug, PartialEq)]
pub enum VsEvent {
    Propose(View),
    Install(View),
    Deliver {
        view: Option<ViewId>,
        rnd: u128,
        msg: Vec<Option<Input>>,
    },
    Apply {
        view: Option<ViewId>,
        rnd: u128,
        state: Vec<u8>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsParams {
    pub n: usize,
    pub pce: u128,
    pub rnd_limit: u128,
}

impl VsParams {
    pub fn new(n: usize) -> Self {
        VsParams {
            n,
            pce: 8,
            rnd_limit: 1u128 << 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VsState {
    self_id: ProcessorId,
    params: VsParams,
    rep: Vec<Replica>,
    /// State after this processor's latest apply.
    applied: Vec<u8>,
    last_applied: Option<(Option<ViewId>, u128)>,
    crd: Option<ProcessorId>,
}

/// Coordinator sets computed at the top of an iteration.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CrdView {
    pub seem: BTreeSet<ProcessorId>,
    pub val: BTreeSet<ProcessorId>,
}

impl VsState {
    pub fn new(self_id: ProcessorId, params: VsParams, initial_state: Vec<u8>) -> Self {
        let rep = (0..params.n)
            .map(|_| Replica::initial(params.n, initial_state.clone()))
            .collect();
        VsState {
            self_id,
            params,
            rep,
            applied: initial_state,
            last_applied: None,
            crd: None,
        }
    }

    pub fn from_parts(
        self_id: ProcessorId,
        params: VsParams,
        rep: Vec<Replica>,
        applied: Vec<u8>,
        crd: Option<ProcessorId>,
    ) -> Self {
        VsState {
            self_id,
            params,
            rep,
            applied,
            last_applied: None,
            crd,
        }
    }

    pub fn own(&self) -> &Replica {
        &self.rep[self.self_id.index()]
    }

    fn own_mut(&mut self) -> &mut Replica {
        &mut self.rep[self.self_id.index()]
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.rep
    }

    pub fn crd(&self) -> Option<ProcessorId> {
        self.crd
    }

    pub fn applied_state(&self) -> &[u8] {
        &self.applied
    }

    pub fn on_vs_message(&mut self, from: ProcessorId, m: Replica) {
        if from.index() < self.rep.len() && from != self.self_id {
            self.rep[from.index()] = m;
        }
    }

    /// `seemCrd` and `valCrd` for the given failure detector output. The
    /// trust-symmetry condition is checked over the processors in `FD`.
    pub fn compute_crd(&self, fd_in: &[(ProcessorId, Option<ProcessorId>)]) -> CrdView {
        let n = self.params.n;
        let fd: BTreeSet<ProcessorId> = fd_in.iter().map(|&(p, _)| p).collect();
        let crd = |l: ProcessorId| fd_in.iter().find(|&&(p, _)| p == l).and_then(|&(_, c)| c);
        let mut seem = BTreeSet::new();
        for &l in &fd {
            if l.index() >= n {
                continue;
            }
            let r = &self.rep[l.index()];
            if r.prop_v.creator() != Some(l)
                || r.prop_v.set.len() <= n / 2
                || r.fd.len() <= n / 2
                || !r.prop_v.set.contains(&l)
            {
                continue;
            }
            let symmetric = fd
                .iter()
                .filter(|k| k.index() < n)
                .all(|k| r.prop_v.set.contains(k) == self.rep[k.index()].fd.contains(&l));
            if !symmetric {
                continue;
            }
            let ok = match r.status {
                Status::Multicast => r.view == r.prop_v && crd(l) == Some(l),
                Status::Install => crd(l) == Some(l),
                Status::Propose => true,
            };
            if ok {
                seem.insert(l);
            }
        }
        let val = seem
            .iter()
            .copied()
            .filter(|&l| {
                let id_l = self.rep[l.index()]
                    .prop_v
                    .id
                    .as_ref()
                    .expect("seeming crd has a view id");
                seem.iter().all(|&k| {
                    let id_k = self.rep[k.index()]
                        .prop_v
                        .id
                        .as_ref()
                        .expect("seeming crd has a view id");
                    matches!(cmp_counter(id_k, id_l), LabelOrdering::Less | LabelOrdering::Equal)
                })
            })
            .collect();
        CrdView { seem, val }
    }

    /// One iteration of the do-forever loop. Returns the replica to send and
    /// its destinations.
    pub fn iterate(
        &mut self,
        fd_in: &[(ProcessorId, Option<ProcessorId>)],
        inc: &mut dyn IncrementService,
        app: &mut dyn Automaton,
        ev: &mut Vec<VsEvent>,
    ) -> (Replica, Vec<ProcessorId>) {
        let n = self.params.n;
        let me = self.self_id;
        let fd: BTreeSet<ProcessorId> = fd_in.iter().map(|&(p, _)| p).filter(|p| p.index() < n).collect();
        self.own_mut().fd = fd.clone();

        let CrdView { seem, val } = self.compute_crd(fd_in);
        let no_crd = val.len() != 1;
        let valid = if no_crd { None } else { val.iter().next().copied() };
        self.crd = valid;
        self.own_mut().no_crd = no_crd;

        let own = self.own().clone();
        let majority = |count: usize| count > n / 2;
        let supporters = fd
            .iter()
            .filter(|k| {
                let r = &self.rep[k.index()];
                r.fd.contains(&me) && r.no_crd
            })
            .count();
        let adopted_prop = fd.iter().filter(|k| self.rep[k.index()].prop_v == own.prop_v).count();
        let is_crd = valid == Some(me);
        let exhausted_rnd = is_crd
            && own.status == Status::Multicast
            && (own.rnd + 1 >= self.params.rnd_limit
                || own.view.set.iter().any(|j| {
                    let r = &self.rep[j.index()];
                    r.view == own.view && r.rnd > own.rnd
                }));
        let propose = majority(fd.len())
            && ((no_crd && majority(supporters))
                || (is_crd && fd != own.prop_v.set && majority(adopted_prop))
                || exhausted_rnd);

        if propose {
            if let Some(id) = inc.poll_inc() {
                let v = View {
                    id: Some(id),
                    set: fd.clone(),
                };
                let r = self.own_mut();
                r.status = Status::Propose;
                r.prop_v = v.clone();
                ev.push(VsEvent::Propose(v));
            }
        } else {
            inc.cancel_inc();
            if is_crd && self.round_end(&own) {
                self.coordinator_step(app, ev);
            } else if let Some(l) = valid.filter(|&l| l != me) {
                let rl = &self.rep[l.index()];
                if rl.rnd == 0 || own.rnd < rl.rnd || rl.view != rl.prop_v {
                    self.follower_step(l, app, ev);
                }
            }
        }

        let own = self.own();
        let mut m = own.clone();
        if own.status == Status::Multicast && own.rnd % self.params.pce != 0 {
            m.state = None;
        }
        let mut dest: BTreeSet<ProcessorId> = seem;
        if is_crd {
            dest.extend(own.prop_v.set.iter().copied());
        }
        if no_crd || own.status == Status::Propose {
            dest.extend(fd.iter().copied());
        }
        dest.remove(&me);
        dest.retain(|p| p.index() < n);
        (m, dest.into_iter().collect())
    }

    fn round_end(&self, own: &Replica) -> bool {
        let rep = |j: &ProcessorId| self.rep.get(j.index());
        match own.status {
            Status::Multicast => own.view.set.iter().all(|j| rep(j).is_some_and(|r| r.same_round(own))),
            Status::Propose => own
                .prop_v
                .set
                .iter()
                .all(|j| rep(j).is_some_and(|r| r.prop_v == own.prop_v && r.status == Status::Propose)),
            Status::Install => own
                .prop_v
                .set
                .iter()
                .all(|j| rep(j).is_some_and(|r| r.same_round(own) && r.prop_v == own.prop_v)),
        }
    }

    fn coordinator_step(&mut self, app: &mut dyn Automaton, ev: &mut Vec<VsEvent>) {
        let me = self.self_id;
        match self.own().status {
            Status::Multicast => {
                let own = self.own().clone();
                let state = own.state.clone().unwrap_or_else(|| self.applied.clone());
                let next = app.apply(&state, &own.msg);
                ev.push(VsEvent::Deliver {
                    view: own.view.id.clone(),
                    rnd: own.rnd,
                    msg: own.msg.clone(),
                });
                ev.push(VsEvent::Apply {
                    view: own.view.id.clone(),
                    rnd: own.rnd,
                    state: next.clone(),
                });
                self.applied = next.clone();
                self.last_applied = Some((own.view.id.clone(), own.rnd));
                let input = app.fetch();
                let msg: Vec<Option<Input>> = (0..self.params.n)
                    .map(|j| {
                        let pj = ProcessorId::from(j);
                        if pj == me {
                            input.clone()
                        } else if own.view.set.contains(&pj) {
                            self.rep[j].input.clone()
                        } else {
                            None
                        }
                    })
                    .collect();
                let r = self.own_mut();
                r.state = Some(next);
                r.input = input;
                r.msg = msg;
                r.rnd += 1;
            }
            Status::Propose => {
                let members = self.own().prop_v.set.clone();
                let state = app.synch_state(&self.rep, &members, me);
                let msg = app.synch_msgs(&self.rep, &members, me);
                let r = self.own_mut();
                if let Some(s) = state {
                    r.state = Some(s);
                }
                if let Some(m) = msg {
                    r.msg = m;
                }
                r.status = Status::Install;
                if let Some(s) = self.own().state.clone() {
                    self.applied = s;
                }
            }
            Status::Install => {
                let r = self.own_mut();
                r.view = r.prop_v.clone();
                r.status = Status::Multicast;
                r.rnd = 0;
                let v = r.view.clone();
                ev.push(VsEvent::Install(v));
            }
        }
    }

    fn follower_step(&mut self, l: ProcessorId, app: &mut dyn Automaton, ev: &mut Vec<VsEvent>) {
        let me = self.self_id;
        let rl = self.rep[l.index()].clone();
        match rl.status {
            Status::Multicast => {
                let key = (rl.view.id.clone(), rl.rnd);
                if self.last_applied.as_ref() == Some(&key) {
                    return;
                }
                let mut r = rl;
                if r.state.is_none() {
                    r.state = Some(self.applied.clone());
                }
                let own = self.own();
                r.fd = own.fd.clone();
                r.no_crd = own.no_crd;
                let state = r.state.clone().expect("restored above");
                let next = app.apply(&state, &r.msg);
                ev.push(VsEvent::Deliver {
                    view: r.view.id.clone(),
                    rnd: r.rnd,
                    msg: r.msg.clone(),
                });
                ev.push(VsEvent::Apply {
                    view: r.view.id.clone(),
                    rnd: r.rnd,
                    state: next.clone(),
                });
                self.applied = next;
                self.last_applied = Some(key);
                r.input = app.fetch();
                self.rep[me.index()] = r;
            }
            Status::Install => {
                let mut r = rl;
                let own = self.own();
                r.fd = own.fd.clone();
                r.no_crd = own.no_crd;
                if let Some(s) = &r.state {
                    self.applied = s.clone();
                }
                self.rep[me.index()] = r;
            }
            Status::Propose => {
                let r = self.own_mut();
                r.status = Status::Propose;
                r.prop_v = rl.prop_v;
            }
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Multicast => "multicast",
            Status::Propose => "propose",
            Status::Install => "install",
        })
    }
}
