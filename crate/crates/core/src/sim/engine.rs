//! Deterministic discrete-event simulator.
//!
//! Every step either fires the timer of a live processor or delivers the
//! head packet of a non-empty channel lane, chosen uniformly with a seeded
//! ChaCha generator. Channels are per directed link and per lane, FIFO,
//! bounded by the link capacity; sends may be duplicated and deliveries
//! dropped with the configured probabilities.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::automaton::HashChainLog;
use crate::counter::{Counter, CounterMsg, CounterState, ExhaustionThreshold, OpResult};
use crate::error::ConfigError;
use crate::fd::{FdEvent, FdParams, FdState};
use crate::label::ProcessorId;
use crate::labeling::{LabelPair, LabelingState, ProtocolParams, StoreEvent};
use crate::link::{LinkEvent, LinkParams, LinkState, Packet, Role};
use crate::sim::config::{CrashTarget, InitMode, OpMix, ScenarioConfig, Stack};
use crate::sim::inject::Garbage;
use crate::sim::trace::*;
use crate::vs::{Automaton, IncrementService, Replica, VsEvent, VsParams, VsState};

const LANES: usize = 4;
const DIFFUSE: usize = 0;
const QUORUM: usize = 1;
const LINK: usize = 2;
const VS: usize = 3;

#[derive(Clone, Debug)]
enum Msg {
    Label(LabelPair, Option<LabelPair>),
    Counter(CounterMsg),
    Link(Packet),
    Vs(Box<Replica>),
}

impl Msg {
    fn lane(&self) -> usize {
        match self {
            Msg::Label(..) | Msg::Counter(CounterMsg::Diffuse { .. }) => DIFFUSE,
            Msg::Counter(_) => QUORUM,
            Msg::Link(_) => LINK,
            Msg::Vs(_) => VS,
        }
    }
}

#[derive(Debug)]
struct Client {
    remaining: u32,
    issued: u32,
    next_at: u64,
    current: Option<u64>,
}

struct Node {
    id: ProcessorId,
    crashed: bool,
    labeling: Option<LabelingState>,
    counter: Option<CounterState>,
    links: Vec<Option<LinkState>>,
    link_sent: Vec<u64>,
    fd: Option<FdState>,
    vs: Option<VsState>,
    app: Option<HashChainLog>,
    diffuse_ptr: usize,
    client: Option<Client>,
    vs_op: Option<u64>,
    vs_ready: Option<Counter>,
}

struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    table: &'a mut LabelTable,
    rng: &'a mut ChaCha8Rng,
    step: u64,
    out: Vec<(ProcessorId, Msg)>,
    ev: Vec<EventKind>,
}

impl Ctx<'_> {
    fn store_events(&mut self, evs: Vec<StoreEvent>) {
        for e in evs {
            let t = &mut self.table;
            self.ev.push(EventKind::Label(match e {
                StoreEvent::Adopt(l) => LabelEv::Adopt { label: t.intern(&l) },
                StoreEvent::Create(l) => LabelEv::Create { label: t.intern(&l) },
                StoreEvent::Cancel(l) => LabelEv::Cancel { label: t.intern(&l) },
                StoreEvent::PurgeStale => LabelEv::PurgeStale,
                StoreEvent::Overflow { queue } => LabelEv::Overflow { queue: queue.0 },
                StoreEvent::Oversized { inputs } => LabelEv::Oversized { inputs },
            }));
        }
    }

    fn counter_out(&mut self, me: ProcessorId, out: Vec<(ProcessorId, CounterMsg)>) {
        self.out.extend(
            out.into_iter()
                .filter(|(to, _)| *to != me)
                .map(|(to, m)| (to, Msg::Counter(m))),
        );
    }
}

fn encode_crd(c: Option<ProcessorId>) -> Vec<u8> {
    c.map(|p| p.0.to_le_bytes().to_vec()).unwrap_or_default()
}

fn decode_crd(b: &[u8], n: usize) -> Option<ProcessorId> {
    let v = u32::from_le_bytes(b.try_into().ok()?);
    ((v as usize) < n).then_some(ProcessorId(v))
}

/// Hands the counter increment to the virtual synchrony layer.
struct IncPort<'a> {
    counter: &'a mut CounterState,
    op: &'a mut Option<u64>,
    ready: &'a mut Option<Counter>,
    out: Vec<(ProcessorId, CounterMsg)>,
    ev: Vec<StoreEvent>,
    started: Vec<u64>,
}

impl IncrementService for IncPort<'_> {
    fn poll_inc(&mut self) -> Option<Counter> {
        if let Some(c) = self.ready.take() {
            return Some(c);
        }
        if !self.counter.is_busy() {
            if let Ok(id) = self.counter.start_increment(&mut self.out, &mut self.ev) {
                *self.op = Some(id);
                self.started.push(id);
            }
        }
        None
    }

    fn cancel_inc(&mut self) {
        if self.op.take().is_some() {
            self.counter.abandon();
        }
        *self.ready = None;
    }
}

impl Node {
    fn peers(&self, n: usize) -> impl Iterator<Item = ProcessorId> + '_ {
        (0..n as u32).map(ProcessorId).filter(move |&p| p != self.id)
    }

    fn drain_counter(&mut self, ctx: &mut Ctx) {
        let Some(c) = self.counter.as_mut() else { return };
        let Some(o) = c.take_completed() else { return };
        let (kind, counter, value) = match &o.result {
            OpResult::Incremented(c) => (OpKindRec::Increment, Some(c.clone()), None),
            OpResult::Written(c) => (OpKindRec::Write, Some(c.clone()), None),
            OpResult::Read(r) => (
                OpKindRec::Read,
                r.as_ref().map(|(c, _)| c.clone()),
                r.as_ref().map(|(_, v)| hex::encode(v)),
            ),
        };
        let counter = counter.map(|c| ctx.table.counter(&c));
        let absent = counter.is_none();
        ctx.ev.push(EventKind::Counter(CounterEv::OpDone {
            op: o.id,
            kind,
            counter,
            value,
        }));
        if self.vs_op == Some(o.id) {
            self.vs_op = None;
            if let OpResult::Incremented(c) = o.result {
                self.vs_ready = Some(c);
            }
        } else if let Some(cl) = self.client.as_mut() {
            if cl.current == Some(o.id) {
                cl.current = None;
                cl.next_at = ctx.step + ctx.cfg.workload.think_steps;
                if !absent {
                    cl.remaining = cl.remaining.saturating_sub(1);
                }
            }
        }
    }

    fn client_tick(&mut self, ctx: &mut Ctx) {
        let (Some(cl), Some(counter)) = (self.client.as_mut(), self.counter.as_mut()) else {
            return;
        };
        if cl.remaining == 0 || cl.current.is_some() || ctx.step < cl.next_at || counter.is_busy() {
            return;
        }
        let mut out = Vec::new();
        let mut sev = Vec::new();
        let (kind, value) = match ctx.cfg.workload.mix {
            OpMix::Increment => (OpKindRec::Increment, None),
            OpMix::Register { read_percent } => {
                if ctx.rng.gen_range(0..100u8) < read_percent {
                    (OpKindRec::Read, None)
                } else {
                    (
                        OpKindRec::Write,
                        Some(format!("w{}.{}", self.id, cl.issued).into_bytes()),
                    )
                }
            }
        };
        let r = match (&kind, &value) {
            (OpKindRec::Increment, _) => counter.start_increment(&mut out, &mut sev),
            (OpKindRec::Write, Some(v)) => counter.start_write(v.clone(), &mut out, &mut sev),
            _ => counter.start_read(&mut out, &mut sev),
        };
        if let Ok(id) = r {
            cl.current = Some(id);
            cl.issued += 1;
            ctx.ev.push(EventKind::Counter(CounterEv::OpStart {
                op: id,
                kind,
                value: value.map(hex::encode),
            }));
        }
        ctx.store_events(sev);
        ctx.counter_out(self.id, out);
        self.drain_counter(ctx);
    }

    fn own_crd(&self) -> Option<ProcessorId> {
        self.vs.as_ref().and_then(|v| v.crd())
    }

    /// Sends the next payload if this end holds the token, then the
    /// sender's retransmission.
    fn pump_link(&mut self, peer: ProcessorId, ctx: &mut Ctx) {
        let crd = self.own_crd();
        let Some(link) = self.links[peer.index()].as_mut() else {
            return;
        };
        if link.holds_token() {
            let payload = match (ctx.cfg.stack, link.role()) {
                (Stack::Link, Role::Sender) => {
                    let seq = self.link_sent[peer.index()];
                    if ctx.cfg.workload.link_payloads.is_some_and(|b| seq >= b) {
                        None
                    } else {
                        self.link_sent[peer.index()] += 1;
                        Some(seq.to_le_bytes().to_vec())
                    }
                }
                (Stack::Link, Role::Receiver) => Some(Vec::new()),
                _ => Some(encode_crd(crd)),
            };
            if let Some(p) = payload {
                if ctx.cfg.stack == Stack::Link && link.role() == Role::Sender {
                    ctx.ev.push(EventKind::Link(LinkEv::Send {
                        peer: peer.0,
                        payload: hex::encode(&p),
                    }));
                }
                link.link_send(p).expect("token holder may send");
            }
        }
        if let Some(pkt) = link.on_timer() {
            ctx.out.push((peer, Msg::Link(pkt)));
        }
    }

    fn on_token(&mut self, peer: ProcessorId, payload: &[u8], ctx: &mut Ctx) {
        ctx.ev.push(EventKind::Link(LinkEv::Token { peer: peer.0 }));
        if let Some(fd) = self.fd.as_mut() {
            for e in fd.fd_on_token(peer, decode_crd(payload, ctx.cfg.n)) {
                ctx.ev.push(EventKind::Fd(match e {
                    FdEvent::Suspect(p) => FdEv::Suspect { peer: p.0 },
                    FdEvent::Trust(p) => FdEv::Trust { peer: p.0 },
                }));
            }
        }
    }

    fn on_link_packet(&mut self, from: ProcessorId, pkt: Packet, ctx: &mut Ctx) {
        let Some(link) = self.links[from.index()].as_mut() else {
            return;
        };
        let evs = link.link_on_packet(&pkt);
        for e in evs {
            match e {
                LinkEvent::Deliver(p) => {
                    if ctx.cfg.stack == Stack::Link {
                        ctx.ev.push(EventKind::Link(LinkEv::Deliver {
                            peer: from.0,
                            payload: hex::encode(&p),
                        }));
                    }
                    self.on_token(from, &p, ctx);
                    self.pump_link(from, ctx);
                }
                LinkEvent::Ack(tag) => {
                    let link = self.links[from.index()].as_ref().expect("checked above");
                    ctx.out.push((from, Msg::Link(link.ack(tag))));
                }
                LinkEvent::TokenArrived(p) => {
                    self.on_token(from, &p, ctx);
                    self.pump_link(from, ctx);
                }
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx) {
        let n = ctx.cfg.n;
        let peers: Vec<ProcessorId> = self.peers(n).collect();
        let target = peers[self.diffuse_ptr % peers.len()];
        self.diffuse_ptr = (self.diffuse_ptr + 1) % peers.len();
        if let Some(l) = &self.labeling {
            let (a, b) = l.on_transmit_ready(target);
            ctx.out.push((target, Msg::Label(a, b)));
        }
        if let Some(c) = &self.counter {
            ctx.out.push((target, Msg::Counter(c.diffuse_to(target))));
            let mut out = Vec::new();
            c.on_tick(&mut out);
            ctx.counter_out(self.id, out);
            self.client_tick(ctx);
        }
        if ctx.cfg.stack.has_links() {
            for &p in &peers {
                self.pump_link(p, ctx);
            }
        }
        if self.vs.is_some() {
            self.vs_iterate(ctx);
        }
    }

    fn vs_iterate(&mut self, ctx: &mut Ctx) {
        let Node {
            id,
            counter,
            fd,
            vs,
            app,
            vs_op,
            vs_ready,
            ..
        } = self;
        let (Some(vs), Some(counter), Some(fd), Some(app)) = (vs.as_mut(), counter.as_mut(), fd.as_ref(), app.as_mut())
        else {
            return;
        };
        let fd_in = fd.fd_output(vs.crd());
        let mut port = IncPort {
            counter,
            op: vs_op,
            ready: vs_ready,
            out: Vec::new(),
            ev: Vec::new(),
            started: Vec::new(),
        };
        let mut vev = Vec::new();
        let (rep, dest) = vs.iterate(&fd_in, &mut port, app as &mut dyn Automaton, &mut vev);
        let IncPort { out, ev, started, .. } = port;
        for op in started {
            ctx.ev.push(EventKind::Counter(CounterEv::OpStart {
                op,
                kind: OpKindRec::Increment,
                value: None,
            }));
        }
        ctx.store_events(ev);
        ctx.counter_out(*id, out);
        for e in vev {
            let t = &mut ctx.table;
            ctx.ev.push(EventKind::Vs(match e {
                VsEvent::Propose(v) => VsEv::Propose { view: t.view(&v) },
                VsEvent::Install(v) => VsEv::Install { view: t.view(&v) },
                VsEvent::Deliver { view, rnd, msg } => VsEv::Deliver {
                    view: view.map(|c| t.counter(&c)),
                    rnd,
                    msg: msg.iter().map(|m| m.as_ref().map(hex::encode)).collect(),
                },
                VsEvent::Apply { view, rnd, state } => VsEv::Apply {
                    view: view.map(|c| t.counter(&c)),
                    rnd,
                    state: hex::encode(state),
                },
            }));
        }
        let rep = Box::new(rep);
        for d in dest {
            ctx.out.push((d, Msg::Vs(rep.clone())));
        }
        self.drain_counter(ctx);
    }

    fn on_message(&mut self, from: ProcessorId, msg: Msg, ctx: &mut Ctx) {
        match msg {
            Msg::Label(a, b) => {
                if let Some(l) = self.labeling.as_mut() {
                    let ev = l.on_receive(from, a, b);
                    ctx.store_events(ev);
                }
            }
            Msg::Counter(m) => {
                if let Some(c) = self.counter.as_mut() {
                    let mut out = Vec::new();
                    let mut ev = Vec::new();
                    c.on_message(from, m, &mut out, &mut ev);
                    ctx.store_events(ev);
                    ctx.counter_out(self.id, out);
                    self.drain_counter(ctx);
                }
            }
            Msg::Link(p) => self.on_link_packet(from, p, ctx),
            Msg::Vs(r) => {
                if let Some(v) = self.vs.as_mut() {
                    v.on_vs_message(from, *r);
                }
            }
        }
    }
}

/// A configured run in progress.
pub struct Simulator {
    cfg: ScenarioConfig,
    params: ProtocolParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    lanes: Vec<VecDeque<Msg>>,
    nonempty: Vec<usize>,
    pos: Vec<usize>,
    step: u64,
    seq: u64,
    table: LabelTable,
    events: Vec<TraceEvent>,
    crashes: Vec<(u64, CrashTarget)>,
    next_crash: usize,
}

const ABSENT: usize = usize::MAX;

impl Simulator {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let params = cfg.protocol_params()?;
        let n = cfg.n;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let threshold = ExhaustionThreshold::new(cfg.threshold())
            .ok_or_else(|| ConfigError::Invalid("exhaustion threshold too small".into()))?;
        let fd_params = FdParams::new(cfg.w());
        let stack = cfg.stack;
        let arbitrary = match cfg.init {
            InitMode::Arbitrary(b) => Some(b),
            InitMode::Clean => None,
        };

        let mut nodes = Vec::with_capacity(n);
        let mut lanes: Vec<VecDeque<Msg>> = (0..n * n * LANES).map(|_| VecDeque::new()).collect();
        {
            let mut g = arbitrary.map(|b| Garbage::new(&mut rng, params, b, cfg.threshold()));
            for i in 0..n {
                let id = ProcessorId(i as u32);
                let labeling = (stack == Stack::Labeling).then(|| match g.as_mut() {
                    Some(g) => LabelingState::from_store(g.label_store(id)),
                    None => LabelingState::new(id, params),
                });
                let counter = stack.has_counters().then(|| match g.as_mut() {
                    Some(g) => {
                        let mut c = CounterState::from_store(g.counter_store(id), threshold, g.rng.gen());
                        c.set_written(g.written());
                        c
                    }
                    None => CounterState::new(id, params, threshold),
                });
                let links = (0..n as u32)
                    .map(|p| {
                        (stack.has_links() && p != id.0).then(|| {
                            let l = LinkState::new(LinkParams::for_pair(cfg.link_capacity, id.0, p));
                            match g.as_mut() {
                                Some(g) if g.bounds.corrupt_links => g.link(l),
                                _ => l,
                            }
                        })
                    })
                    .collect();
                let fd = stack.has_fd().then(|| match g.as_mut() {
                    Some(g) if g.bounds.corrupt_links => g.fd(id, fd_params),
                    _ => FdState::new(id, n, fd_params),
                });
                let mut app = (stack == Stack::Vs).then(|| HashChainLog::new(id));
                if let (Some(a), Some(b)) = (app.as_mut(), cfg.workload.vs_inputs) {
                    *a = a.clone().with_budget(b);
                }
                let vs = app.as_ref().map(|a| {
                    let vp = VsParams {
                        n,
                        pce: cfg.params.pce,
                        rnd_limit: cfg.threshold(),
                    };
                    match g.as_mut() {
                        Some(g) => {
                            let rep = (0..n).map(|_| g.replica()).collect();
                            let applied = g.bytes(40);
                            let crd = g.rng.gen_bool(0.5).then(|| g.pid());
                            VsState::from_parts(id, vp, rep, applied, crd)
                        }
                        None => VsState::new(id, vp, a.initial_state()),
                    }
                });
                let client = cfg.workload.clients.contains(&id.0).then_some(Client {
                    remaining: cfg.workload.ops_per_client,
                    issued: 0,
                    next_at: cfg.workload.start_step,
                    current: None,
                });
                nodes.push(Node {
                    id,
                    crashed: false,
                    labeling,
                    counter,
                    links,
                    link_sent: vec![0; n],
                    fd,
                    vs,
                    app,
                    diffuse_ptr: i,
                    client,
                    vs_op: None,
                    vs_ready: None,
                });
            }
            if let Some(g) = g.as_mut().filter(|g| g.bounds.channel_garbage) {
                let c = cfg.link_capacity as usize;
                let tag_space = LinkParams::new(cfg.link_capacity, Role::Sender).tag_space();
                for from in 0..n {
                    for to in (0..n).filter(|&t| t != from) {
                        for lane in 0..LANES {
                            let used = match lane {
                                DIFFUSE => stack == Stack::Labeling || stack.has_counters(),
                                QUORUM => stack.has_counters(),
                                LINK => stack.has_links(),
                                _ => stack == Stack::Vs,
                            };
                            if !used {
                                continue;
                            }
                            let fill = g.rng.gen_range(0..=c);
                            for _ in 0..fill {
                                let m = match lane {
                                    DIFFUSE if stack == Stack::Labeling => {
                                        let a = g.label_pair();
                                        let b = g.rng.gen_bool(0.8).then(|| g.label_pair());
                                        Msg::Label(a, b)
                                    }
                                    DIFFUSE => Msg::Counter(g.counter_msg(false)),
                                    QUORUM => Msg::Counter(g.counter_msg(true)),
                                    LINK => Msg::Link(g.packet(tag_space)),
                                    _ => Msg::Vs(Box::new(g.replica())),
                                };
                                lanes[(from * n + to) * LANES + lane].push_back(m);
                            }
                        }
                    }
                }
            }
        }

        let mut crashes: Vec<(u64, CrashTarget)> = cfg.crash_schedule.iter().map(|c| (c.step, c.target)).collect();
        if let Some(r) = cfg.random_crashes {
            let count = rng.gen_range(0..=r.max);
            let mut pool: Vec<u32> = (0..n as u32).collect();
            for _ in 0..count {
                let p = pool.swap_remove(rng.gen_range(0..pool.len()));
                crashes.push((rng.gen_range(r.from..r.to), CrashTarget::Pid(p)));
            }
        }
        crashes.sort_by_key(|c| c.0);

        let mut sim = Simulator {
            cfg,
            params,
            rng,
            nodes,
            lanes,
            nonempty: Vec::new(),
            pos: Vec::new(),
            step: 0,
            seq: 0,
            table: LabelTable::default(),
            events: Vec::new(),
            crashes,
            next_crash: 0,
        };
        sim.pos = vec![ABSENT; sim.lanes.len()];
        for i in 0..sim.lanes.len() {
            if !sim.lanes[i].is_empty() {
                sim.pos[i] = sim.nonempty.len();
                sim.nonempty.push(i);
            }
        }
        for i in 0..n {
            if let Some(fd) = &sim.nodes[i].fd {
                let trusted = fd.fd_output(None).into_iter().map(|(p, _)| p.0).collect();
                sim.record(i as u32, EventKind::Fd(FdEv::Init { trusted }));
            }
        }
        Ok(sim)
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn record(&mut self, pid: u32, kind: EventKind) {
        self.events.push(TraceEvent {
            seq: self.seq,
            step: self.step,
            pid,
            kind,
        });
        self.seq += 1;
    }

    fn lane_id(&self, from: usize, to: usize, lane: usize) -> usize {
        (from * self.cfg.n + to) * LANES + lane
    }

    fn push(&mut self, id: usize, m: Msg) {
        let cap = self.cfg.link_capacity as usize;
        let q = &mut self.lanes[id];
        if q.len() >= cap {
            // A full channel loses either the new packet or an older one.
            if self.rng.gen_bool(0.5) {
                return;
            }
            let victim = self.rng.gen_range(0..q.len());
            q.remove(victim);
        }
        q.push_back(m);
        if self.pos[id] == ABSENT {
            self.pos[id] = self.nonempty.len();
            self.nonempty.push(id);
        }
    }

    fn pop(&mut self, id: usize) -> Option<Msg> {
        let m = self.lanes[id].pop_front();
        if self.lanes[id].is_empty() && self.pos[id] != ABSENT {
            let p = self.pos[id];
            self.nonempty.swap_remove(p);
            if p < self.nonempty.len() {
                self.pos[self.nonempty[p]] = p;
            }
            self.pos[id] = ABSENT;
        }
        m
    }

    fn clear_lane(&mut self, id: usize) {
        while self.pop(id).is_some() {}
    }

    fn send(&mut self, from: usize, to: ProcessorId, m: Msg) {
        let to = to.index();
        if to >= self.cfg.n || to == from || self.nodes[to].crashed {
            return;
        }
        let id = self.lane_id(from, to, m.lane());
        if self.rng.gen_bool(self.cfg.loss.duplicate) {
            self.push(id, m.clone());
        }
        self.push(id, m);
    }

    fn protected(&self, p: usize) -> bool {
        self.cfg
            .primary_partition
            .as_ref()
            .is_some_and(|pp| pp.leader as usize == p || pp.majority.contains(&(p as u32)))
    }

    fn crashed_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.crashed).count()
    }

    fn resolve_target(&mut self, t: CrashTarget) -> Option<usize> {
        let n = self.cfg.n;
        let alive: Vec<usize> = (0..n)
            .filter(|&p| !self.nodes[p].crashed && !self.protected(p))
            .collect();
        if alive.is_empty() {
            return None;
        }
        let pick = |rng: &mut ChaCha8Rng, v: &[usize]| v[rng.gen_range(0..v.len())];
        match t {
            CrashTarget::Pid(p) => alive.contains(&(p as usize)).then_some(p as usize),
            CrashTarget::Coordinator => {
                let mut tally = vec![0usize; n];
                for node in self.nodes.iter().filter(|x| !x.crashed) {
                    if let Some(c) = node.own_crd() {
                        tally[c.index()] += 1;
                    }
                }
                let best = alive
                    .iter()
                    .copied()
                    .filter(|&p| tally[p] > 0)
                    .max_by_key(|&p| (tally[p], n - p));
                Some(best.unwrap_or_else(|| pick(&mut self.rng, &alive)))
            }
            CrashTarget::Follower => {
                let followers: Vec<usize> = alive
                    .iter()
                    .copied()
                    .filter(|&p| self.nodes[p].own_crd().is_some_and(|c| c.index() != p))
                    .collect();
                let from = if followers.is_empty() { &alive } else { &followers };
                Some(pick(&mut self.rng, from))
            }
        }
    }

    fn crash(&mut self, p: usize) {
        if self.crashed_count() >= self.cfg.max_crashes() {
            return;
        }
        self.nodes[p].crashed = true;
        for q in 0..self.cfg.n {
            for lane in 0..LANES {
                let out = self.lane_id(p, q, lane);
                let inb = self.lane_id(q, p, lane);
                self.clear_lane(out);
                self.clear_lane(inb);
            }
        }
        self.record(p as u32, EventKind::Crash);
    }

    fn with_node(&mut self, p: usize, f: impl FnOnce(&mut Node, &mut Ctx)) {
        let mut ctx = Ctx {
            cfg: &self.cfg,
            table: &mut self.table,
            rng: &mut self.rng,
            step: self.step,
            out: Vec::new(),
            ev: Vec::new(),
        };
        f(&mut self.nodes[p], &mut ctx);
        let Ctx { out, ev, .. } = ctx;
        for e in ev {
            self.record(p as u32, e);
        }
        for (to, m) in out {
            self.send(p, to, m);
        }
    }

    /// Executes one scheduler step.
    pub fn step_once(&mut self) {
        while self.next_crash < self.crashes.len() && self.crashes[self.next_crash].0 <= self.step {
            let t = self.crashes[self.next_crash].1;
            self.next_crash += 1;
            if let Some(p) = self.resolve_target(t) {
                self.crash(p);
            }
        }
        let alive: Vec<usize> = (0..self.cfg.n).filter(|&p| !self.nodes[p].crashed).collect();
        let r = self.rng.gen_range(0..alive.len() + self.nonempty.len());
        if r < alive.len() {
            self.with_node(alive[r], |node, ctx| node.on_timer(ctx));
        } else {
            let id = self.nonempty[r - alive.len()];
            let m = self.pop(id).expect("lane is non-empty");
            let from = id / LANES / self.cfg.n;
            let to = id / LANES % self.cfg.n;
            if !self.rng.gen_bool(self.cfg.loss.drop) && !self.nodes[to].crashed {
                self.with_node(to, |node, ctx| node.on_message(ProcessorId(from as u32), m, ctx));
            }
        }
        self.step += 1;
    }

    pub fn run(mut self) -> Trace {
        while self.step < self.cfg.step_budget {
            self.step_once();
        }
        self.finish()
    }

    pub fn finish(mut self) -> Trace {
        let mut nodes = Vec::new();
        for node in &self.nodes {
            let t = &mut self.table;
            let label = node
                .labeling
                .as_ref()
                .map(|l| t.intern(l.max_label()))
                .or_else(|| node.counter.as_ref().map(|c| t.intern(&c.own_max().value.lbl)));
            let counter = node.counter.as_ref().map(|c| t.counter(&c.own_max().value));
            let trusted = node
                .fd
                .as_ref()
                .map(|f| f.fd_output(None).into_iter().map(|(p, _)| p.0).collect());
            let vs = node.vs.as_ref().map(|v| {
                let own = v.own();
                VsSnapshot {
                    view: t.view(&own.view),
                    status: own.status.to_string(),
                    rnd: own.rnd,
                    crd: v.crd().map(|c| c.0),
                    applied: hex::encode(v.applied_state()),
                }
            });
            nodes.push(NodeSnapshot {
                pid: node.id.0,
                crashed: node.crashed,
                label,
                counter,
                trusted,
                vs,
            });
        }
        let header = TraceHeader {
            format: 1,
            config: self.cfg.clone(),
            m: self.cfg.m(),
            own_queue_cap: self.params.own_queue_cap,
            other_queue_cap: self.params.other_queue_cap,
            k: self.params.scheme.k(),
            w: self.cfg.w(),
            threshold: self.cfg.threshold(),
        };
        Trace {
            header,
            labels: self.table.into_labels(),
            events: self.events,
            snapshot: Snapshot {
                steps: self.step,
                nodes,
            },
        }
    }
}

/// Runs a scenario to its step budget.
pub fn run(cfg: ScenarioConfig) -> Result<Trace, ConfigError> {
    Ok(Simulator::new(cfg)?.run())
}
