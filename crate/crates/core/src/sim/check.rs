//! Trace checkers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::counter::cmp_counter;
use crate::error::TraceError;
use crate::label::LabelOrdering;
use crate::sim::config::{InitMode, Stack};
use crate::sim::trace::*;

pub const PROPERTIES: &[&str] = &[
    "label-convergence",
    "adoption-bounds",
    "no-overflow",
    "counter-monotonicity",
    "register-safety",
    "exactly-once-link",
    "fd-completeness",
    "virtual-synchrony",
    "smr-agreement",
    "single-proposal",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: String,
    pub pass: bool,
    /// Convergence step for liveness properties, first violation otherwise.
    pub step: Option<u64>,
    pub detail: String,
}

impl Verdict {
    fn new(property: &str, pass: bool, step: Option<u64>, detail: impl Into<String>) -> Self {
        Verdict {
            property: property.into(),
            pass,
            step,
            detail: detail.into(),
        }
    }
}

/// Properties that are meaningful for a stack.
pub fn applicable(stack: Stack, register_ops: bool) -> Vec<&'static str> {
    match stack {
        Stack::Labeling => vec!["label-convergence", "adoption-bounds", "no-overflow"],
        Stack::Counter => {
            let mut v = vec!["label-convergence", "adoption-bounds", "no-overflow"];
            v.push(if register_ops {
                "register-safety"
            } else {
                "counter-monotonicity"
            });
            v
        }
        Stack::Link => vec!["exactly-once-link"],
        Stack::Fd => vec!["fd-completeness"],
        Stack::Vs => vec![
            "fd-completeness",
            "virtual-synchrony",
            "smr-agreement",
            "single-proposal",
        ],
    }
}

pub fn check(trace: &Trace, property: &str) -> Result<Verdict, TraceError> {
    Ok(match property {
        "label-convergence" => label_convergence(trace),
        "adoption-bounds" => adoption_bounds(trace),
        "no-overflow" => no_overflow(trace),
        "counter-monotonicity" => counter_monotonicity(trace),
        "register-safety" => register_safety(trace),
        "exactly-once-link" => exactly_once_link(trace),
        "fd-completeness" => fd_completeness(trace),
        "virtual-synchrony" => virtual_synchrony(trace),
        "smr-agreement" => smr_agreement(trace),
        "single-proposal" => single_proposal(trace),
        other => return Err(TraceError::UnknownProperty(other.into())),
    })
}

pub fn check_applicable(trace: &Trace) -> Vec<Verdict> {
    let register = matches!(
        trace.header.config.workload.mix,
        crate::sim::config::OpMix::Register { .. }
    );
    applicable(trace.header.config.stack, register)
        .into_iter()
        .map(|p| check(trace, p).expect("known property"))
        .collect()
}

/// Step of the last adopt or create event, if any.
pub fn label_convergence_step(trace: &Trace) -> Option<u64> {
    trace
        .events
        .iter()
        .rev()
        .find(|e| matches!(e.kind, EventKind::Label(LabelEv::Adopt { .. } | LabelEv::Create { .. })))
        .map(|e| e.step)
}

fn label_convergence(t: &Trace) -> Verdict {
    let p = "label-convergence";
    let conv = label_convergence_step(t);
    let alive: Vec<&NodeSnapshot> = t.snapshot.nodes.iter().filter(|n| !n.crashed).collect();
    let labels: BTreeSet<Option<LabelRef>> = alive.iter().map(|n| n.label).collect();
    let quiet = t.snapshot.steps - conv.map_or(0, |s| s + 1);
    let window = t.header.config.quiet_window();
    if labels.len() != 1 || labels.contains(&None) {
        return Verdict::new(
            p,
            false,
            conv,
            format!("{} distinct max labels at the end", labels.len()),
        );
    }
    if quiet < window {
        return Verdict::new(
            p,
            false,
            conv,
            format!("only {quiet} quiet steps after the last adoption, need {window}"),
        );
    }
    let l = labels.into_iter().next().flatten().expect("checked");
    Verdict::new(
        p,
        true,
        conv,
        format!("converged to {:?} with {quiet} quiet steps", t.label(l)),
    )
}

fn adoption_bounds(t: &Trace) -> Verdict {
    let p = "adoption-bounds";
    let n = t.n();
    let m = t.header.m;
    let crash_at: HashMap<u32, u64> = t
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Crash)
        .map(|e| (e.pid, e.seq))
        .collect();
    let mut silent: BTreeMap<(u32, u32), HashSet<LabelRef>> = BTreeMap::new();
    let mut created: BTreeMap<u32, HashSet<LabelRef>> = BTreeMap::new();
    for e in &t.events {
        match &e.kind {
            EventKind::Label(LabelEv::Adopt { label }) => {
                let c = t.label(*label).creator().0;
                if crash_at.get(&c).is_some_and(|&s| e.seq > s) {
                    silent.entry((e.pid, c)).or_default().insert(*label);
                }
            }
            EventKind::Label(LabelEv::Create { label }) => {
                created.entry(e.pid).or_default().insert(*label);
            }
            _ => {}
        }
    }
    let silent_max = silent.values().map(|s| s.len()).max().unwrap_or(0);
    let created_max = created.values().map(|s| s.len()).max().unwrap_or(0);
    let silent_bound = n + m;
    let created_bound = n * (n * n + m);
    let pass = silent_max <= silent_bound && created_max <= created_bound;
    Verdict::new(
        p,
        pass,
        None,
        format!(
            "adopted labels of a crashed creator: max {silent_max} (bound {silent_bound}); \
             labels created by one processor: max {created_max} (bound {created_bound})"
        ),
    )
}

fn no_overflow(t: &Trace) -> Verdict {
    let first = t
        .events
        .iter()
        .find(|e| matches!(e.kind, EventKind::Label(LabelEv::Overflow { .. })));
    match first {
        Some(e) => Verdict::new(
            "no-overflow",
            false,
            Some(e.step),
            format!("queue overflow at processor {}", e.pid),
        ),
        None => Verdict::new("no-overflow", true, None, "no queue overflow"),
    }
}

#[derive(Clone, Debug)]
struct Op {
    pid: u32,
    kind: OpKindRec,
    start_seq: u64,
    start_step: u64,
    done_seq: Option<u64>,
    counter: Option<CounterRec>,
    value: Option<String>,
}

fn collect_ops(t: &Trace) -> Vec<Op> {
    let mut ops: Vec<Op> = Vec::new();
    let mut open: HashMap<(u32, u64), usize> = HashMap::new();
    for e in &t.events {
        match &e.kind {
            EventKind::Counter(CounterEv::OpStart { op, kind, value }) => {
                open.insert((e.pid, *op), ops.len());
                ops.push(Op {
                    pid: e.pid,
                    kind: *kind,
                    start_seq: e.seq,
                    start_step: e.step,
                    done_seq: None,
                    counter: None,
                    value: value.clone(),
                });
            }
            EventKind::Counter(CounterEv::OpDone { op, counter, value, .. }) => {
                if let Some(i) = open.remove(&(e.pid, *op)) {
                    ops[i].done_seq = Some(e.seq);
                    ops[i].counter = counter.clone();
                    if ops[i].kind == OpKindRec::Read {
                        ops[i].value = value.clone();
                    }
                }
            }
            _ => {}
        }
    }
    ops
}

fn counter_monotonicity(t: &Trace) -> Verdict {
    let p = "counter-monotonicity";
    let conv = label_convergence_step(t);
    let done: Vec<Op> = collect_ops(t)
        .into_iter()
        .filter(|o| o.kind != OpKindRec::Read && o.counter.is_some())
        .filter(|o| conv.map_or(true, |c| o.start_step > c))
        .collect();
    if done.is_empty() {
        return Verdict::new(p, false, conv, "no completed increments after label convergence");
    }
    for a in &done {
        for b in &done {
            if a.done_seq.expect("done") < b.start_seq {
                let ca = t.counter(a.counter.as_ref().expect("done"));
                let cb = t.counter(b.counter.as_ref().expect("done"));
                if cmp_counter(&ca, &cb) != LabelOrdering::Less {
                    return Verdict::new(
                        p,
                        false,
                        conv,
                        format!(
                            "increment by {} returned {cb:?}, not above earlier {ca:?} by {}",
                            b.pid, a.pid
                        ),
                    );
                }
            }
        }
    }
    Verdict::new(p, true, conv, format!("{} increments strictly increasing", done.len()))
}

fn register_safety(t: &Trace) -> Verdict {
    let p = "register-safety";
    let ops = collect_ops(t);
    let writes: Vec<&Op> = ops.iter().filter(|o| o.kind == OpKindRec::Write).collect();
    let reads: Vec<&Op> = ops
        .iter()
        .filter(|o| o.kind == OpKindRec::Read && o.counter.is_some())
        .collect();
    let absent = ops
        .iter()
        .filter(|o| o.kind == OpKindRec::Read && o.done_seq.is_some() && o.counter.is_none())
        .count();
    let values: HashSet<&str> = writes.iter().filter_map(|w| w.value.as_deref()).collect();
    let at_least = |a: &CounterRec, b: &CounterRec| {
        matches!(
            cmp_counter(&t.counter(a), &t.counter(b)),
            LabelOrdering::Greater | LabelOrdering::Equal
        )
    };
    for r in &reads {
        let rc = r.counter.as_ref().expect("filtered");
        let rv = r.value.as_deref().unwrap_or("");
        if !rv.is_empty() && !values.contains(rv) {
            return Verdict::new(
                p,
                false,
                None,
                format!("read by {} returned a value never written", r.pid),
            );
        }
        for w in writes.iter().filter(|w| w.done_seq.is_some()) {
            let wc = w.counter.as_ref().expect("completed write");
            if wc == rc && w.value.as_deref() != Some(rv) {
                return Verdict::new(
                    p,
                    false,
                    None,
                    format!("read by {} returned the wrong value for {:?}", r.pid, t.counter(rc)),
                );
            }
            if w.done_seq.expect("done") < r.start_seq && !at_least(rc, wc) {
                return Verdict::new(
                    p,
                    false,
                    None,
                    format!(
                        "read by {} returned {:?}, older than completed write {:?}",
                        r.pid,
                        t.counter(rc),
                        t.counter(wc)
                    ),
                );
            }
        }
        for r0 in &reads {
            if r0.done_seq.expect("done") < r.start_seq && !at_least(rc, r0.counter.as_ref().expect("filtered")) {
                return Verdict::new(p, false, None, format!("read by {} went backwards", r.pid));
            }
        }
    }
    let done_writes = writes.iter().filter(|w| w.done_seq.is_some()).count();
    if reads.is_empty() || done_writes == 0 {
        return Verdict::new(p, false, None, "no completed reads or writes to check");
    }
    Verdict::new(
        p,
        true,
        None,
        format!(
            "{} reads against {done_writes} writes; {absent} reads found no agreed label",
            reads.len()
        ),
    )
}

fn exactly_once_link(t: &Trace) -> Verdict {
    let p = "exactly-once-link";
    let c = t.header.config.link_capacity as usize;
    let bound = match t.header.config.init {
        InitMode::Clean => 0,
        // A corrupted sender also holds one garbage payload of its own.
        InitMode::Arbitrary(b) if b.corrupt_links => c + 1,
        InitMode::Arbitrary(_) => c,
    };
    let mut sent: BTreeMap<(u32, u32), Vec<&str>> = BTreeMap::new();
    let mut got: BTreeMap<(u32, u32), Vec<(&str, u64)>> = BTreeMap::new();
    for e in &t.events {
        match &e.kind {
            EventKind::Link(LinkEv::Send { peer, payload }) => sent.entry((e.pid, *peer)).or_default().push(payload),
            EventKind::Link(LinkEv::Deliver { peer, payload }) if *peer > e.pid => {
                got.entry((*peer, e.pid)).or_default().push((payload, e.step))
            }
            _ => {}
        }
    }
    let mut worst_spurious = 0;
    let mut worst_lost = 0;
    let mut stable_at: Option<u64> = None;
    let mut total = 0;
    for (key, s) in &sent {
        let d = got.get(key).map(Vec::as_slice).unwrap_or(&[]);
        let index: HashMap<&str, usize> = s.iter().enumerate().map(|(i, x)| (*x, i)).collect();
        // Earliest position from which the deliveries are a contiguous run
        // of the sent sequence.
        let mut start = d.len();
        let mut first_sent = s.len();
        for pos in (0..d.len()).rev() {
            let Some(&a) = index.get(d[pos].0) else { break };
            if pos + 1 < d.len() && index.get(d[pos + 1].0) != Some(&(a + 1)) {
                break;
            }
            start = pos;
            first_sent = a;
        }
        let run = d.len() - start;
        let missing_tail = s.len().saturating_sub(first_sent + run);
        if missing_tail > 1 {
            return Verdict::new(
                p,
                false,
                None,
                format!(
                    "link {}->{}: {missing_tail} payloads sent but never delivered",
                    key.0, key.1
                ),
            );
        }
        worst_spurious = worst_spurious.max(start);
        worst_lost = worst_lost.max(first_sent.min(s.len()));
        if start < d.len() {
            stable_at = stable_at.max(Some(d[start].1));
        }
        total += run;
    }
    let pass = worst_spurious <= bound && worst_lost <= bound;
    Verdict::new(
        p,
        pass,
        stable_at,
        format!("{total} exactly-once deliveries; worst prefix: {worst_spurious} spurious, {worst_lost} lost (bound {bound})"),
    )
}

fn fd_completeness(t: &Trace) -> Verdict {
    let p = "fd-completeness";
    let w = t.header.w as usize;
    let n = t.n();
    let crashed: BTreeMap<u32, u64> = t
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Crash)
        .map(|e| (e.pid, e.seq))
        .collect();
    let mut worst = 0;
    let mut last_suspect: Option<u64> = None;
    for (&q, &crash_seq) in &crashed {
        for obs in (0..n as u32).filter(|o| !crashed.contains_key(o)) {
            let mut trusted = true;
            let mut tokens = 0usize;
            let mut suspected_after = false;
            for e in t.events.iter().filter(|e| e.pid == obs) {
                match &e.kind {
                    EventKind::Fd(FdEv::Init { trusted: set }) => trusted = set.contains(&q),
                    EventKind::Fd(FdEv::Suspect { peer }) if *peer == q => {
                        trusted = false;
                        if e.seq > crash_seq && !suspected_after {
                            suspected_after = true;
                            last_suspect = last_suspect.max(Some(e.step));
                        }
                    }
                    EventKind::Fd(FdEv::Trust { peer }) if *peer == q => {
                        trusted = true;
                        if e.seq > crash_seq {
                            return Verdict::new(p, false, Some(e.step), format!("{obs} trusts crashed {q} again"));
                        }
                    }
                    EventKind::Link(LinkEv::Token { .. }) if e.seq > crash_seq && trusted => {
                        tokens += 1;
                        worst = worst.max(tokens);
                        if tokens > w {
                            return Verdict::new(
                                p,
                                false,
                                Some(e.step),
                                format!("{obs} still trusts crashed {q} after {tokens} tokens"),
                            );
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    Verdict::new(
        p,
        true,
        last_suspect,
        format!(
            "{} crashes; at most {worst} tokens before suspicion (W = {w})",
            crashed.len()
        ),
    )
}

fn genuine_views(t: &Trace) -> HashSet<CounterRec> {
    t.events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Vs(VsEv::Propose { view }) => view.id.clone(),
            _ => None,
        })
        .collect()
}

fn virtual_synchrony(t: &Trace) -> Verdict {
    let p = "virtual-synchrony";
    let genuine = genuine_views(t);
    let mut seen: HashMap<(CounterRec, u128), &Vec<Option<String>>> = HashMap::new();
    let mut count = 0;
    for e in &t.events {
        if let EventKind::Vs(VsEv::Deliver {
            view: Some(v),
            rnd,
            msg,
        }) = &e.kind
        {
            if !genuine.contains(v) {
                continue;
            }
            count += 1;
            match seen.get(&(v.clone(), *rnd)) {
                Some(prev) if *prev != msg => {
                    return Verdict::new(
                        p,
                        false,
                        Some(e.step),
                        format!(
                            "{} delivered a different message in {:?} round {rnd}",
                            e.pid,
                            t.counter(v)
                        ),
                    )
                }
                Some(_) => {}
                None => {
                    seen.insert((v.clone(), *rnd), msg);
                }
            }
        }
    }
    Verdict::new(
        p,
        true,
        None,
        format!(
            "{count} deliveries over {} rounds of {} views",
            seen.len(),
            genuine.len()
        ),
    )
}

fn smr_agreement(t: &Trace) -> Verdict {
    let p = "smr-agreement";
    let genuine = genuine_views(t);
    let mut seen: HashMap<(CounterRec, u128), &str> = HashMap::new();
    let mut applied: HashSet<(u32, CounterRec, u128)> = HashSet::new();
    for e in &t.events {
        if let EventKind::Vs(VsEv::Apply {
            view: Some(v),
            rnd,
            state,
        }) = &e.kind
        {
            if !genuine.contains(v) {
                continue;
            }
            if !applied.insert((e.pid, v.clone(), *rnd)) {
                return Verdict::new(
                    p,
                    false,
                    Some(e.step),
                    format!("{} applied {:?} round {rnd} twice", e.pid, t.counter(v)),
                );
            }
            match seen.get(&(v.clone(), *rnd)) {
                Some(prev) if *prev != state => {
                    return Verdict::new(
                        p,
                        false,
                        Some(e.step),
                        format!("{} reached a different state in {:?} round {rnd}", e.pid, t.counter(v)),
                    )
                }
                Some(_) => {}
                None => {
                    seen.insert((v.clone(), *rnd), state);
                }
            }
        }
    }
    Verdict::new(
        p,
        true,
        None,
        format!("{} applies agree over {} rounds", applied.len(), seen.len()),
    )
}

fn single_proposal(t: &Trace) -> Verdict {
    let p = "single-proposal";
    let mut last: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut proposed: HashSet<Option<CounterRec>> = HashSet::new();
    let mut settled: Option<u64> = None;
    let mut proposals = 0;
    for e in &t.events {
        match &e.kind {
            // Stale proposals from the initial state may be repeated until
            // the first genuine view is installed.
            EventKind::Vs(VsEv::Install { view }) if settled.is_none() && proposed.contains(&view.id) => {
                settled = Some(e.step);
                last.clear();
            }
            EventKind::Vs(VsEv::Propose { view }) if settled.is_none() => {
                proposed.insert(view.id.clone());
            }
            // Any change of any failure detector output, or a crash, ends
            // the static period.
            EventKind::Fd(FdEv::Suspect { .. } | FdEv::Trust { .. }) | EventKind::Crash => {
                last.clear();
            }
            EventKind::Vs(VsEv::Propose { view }) => {
                proposals += 1;
                if last.get(&e.pid) == Some(&view.set) {
                    return Verdict::new(
                        p,
                        false,
                        Some(e.step),
                        format!(
                            "{} proposed twice for the same failure detector output {:?}",
                            e.pid, view.set
                        ),
                    );
                }
                last.insert(e.pid, view.set.clone());
            }
            _ => {}
        }
    }
    match settled {
        Some(step) => Verdict::new(
            p,
            true,
            Some(step),
            format!("{proposals} proposals after the first install"),
        ),
        None => Verdict::new(p, false, None, "no view was installed".to_string()),
    }
}
