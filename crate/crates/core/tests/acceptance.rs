//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use ssvs::link::{LinkEvent, LinkParams, LinkState, Packet, PacketKind, Role};
use ssvs::sim::config::OpMix;
use ssvs::sim::trace::{CounterEv, EventKind, LabelEv, OpKindRec};
use ssvs::sim::{check_applicable, run, ScenarioConfig, Trace, Verdict};

// Pinned limits.
const LABEL_RUN_SECS: f64 = 5.0;
const VS_RUN_SECS: f64 = 10.0;
const DETERMINISM_SEEDS: u64 = 3;

fn scenario(name: &str) -> ScenarioConfig {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name]
        .iter()
        .collect();
    ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

struct Run<T> {
    seed: u64,
    secs: f64,
    digest: [u8; 32],
    verdicts: Vec<Verdict>,
    extra: T,
}

impl<T> Run<T> {
    fn verdict(&self, property: &str) -> &Verdict {
        self.verdicts
            .iter()
            .find(|v| v.property == property)
            .unwrap_or_else(|| panic!("no {property} verdict"))
    }
}

fn digest(t: &Trace) -> [u8; 32] {
    Sha256::digest(t.to_jsonl()).into()
}

fn fuzz<T: Send>(
    base: &ScenarioConfig,
    seeds: std::ops::Range<u64>,
    extra: impl Fn(&Trace) -> T + Sync,
) -> Vec<Run<T>> {
    seeds
        .into_par_iter()
        .map(|seed| {
            let cfg = ScenarioConfig { seed, ..base.clone() };
            let t0 = Instant::now();
            let trace = run(cfg).expect("valid scenario");
            let secs = t0.elapsed().as_secs_f64();
            Run {
                seed,
                secs,
                digest: digest(&trace),
                verdicts: check_applicable(&trace),
                extra: extra(&trace),
            }
        })
        .collect()
}

/// Seeds whose `property` verdict failed, with the first failure's detail.
fn failures<T>(runs: &[Run<T>], property: &str) -> (usize, String) {
    let bad: Vec<&Run<T>> = runs.iter().filter(|r| !r.verdict(property).pass).collect();
    let first = bad
        .first()
        .map(|r| format!("; first: seed {} {}", r.seed, r.verdict(property).detail))
        .unwrap_or_default();
    (bad.len(), first)
}

fn max_secs<T>(runs: &[Run<T>]) -> f64 {
    runs.iter().map(|r| r.secs).fold(0.0, f64::max)
}

struct Report {
    lines: Vec<(u32, &'static str, bool, String)>,
}

impl Report {
    fn add(&mut self, id: u32, name: &'static str, pass: bool, detail: String) {
        println!("{} [{id:>2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, name, pass, detail));
    }
}

// Label-stack oracles computed from the trace without the checker.

struct LabelFacts {
    agree: bool,
    quiet: u64,
    /// Largest number of adoptions by one processor of labels created by a
    /// processor that had already crashed.
    silent_adoptions: usize,
    max_creations: usize,
    overflows: usize,
}

fn label_facts(t: &Trace) -> LabelFacts {
    let alive: Vec<_> = t.snapshot.nodes.iter().filter(|n| !n.crashed).collect();
    let agree = alive
        .windows(2)
        .all(|w| w[0].label.is_some() && w[0].label == w[1].label);
    let mut last_change = 0;
    let mut crashed_at: HashMap<u32, u64> = HashMap::new();
    let mut silent: HashMap<(u32, u32), usize> = HashMap::new();
    let mut created: HashMap<u32, usize> = HashMap::new();
    let mut overflows = 0;
    for e in &t.events {
        match &e.kind {
            EventKind::Crash => {
                crashed_at.insert(e.pid, e.step);
            }
            EventKind::Label(LabelEv::Adopt { label }) => {
                last_change = e.step;
                let c = t.label(*label).creator().0;
                if crashed_at.get(&c).is_some_and(|&s| s < e.step) {
                    *silent.entry((e.pid, c)).or_default() += 1;
                }
            }
            EventKind::Label(LabelEv::Create { .. }) => {
                last_change = e.step;
                *created.entry(e.pid).or_default() += 1;
            }
            EventKind::Label(LabelEv::Overflow { .. }) => overflows += 1,
            _ => {}
        }
    }
    LabelFacts {
        agree,
        quiet: t.snapshot.steps - last_change,
        silent_adoptions: silent.values().copied().max().unwrap_or(0),
        max_creations: created.values().copied().max().unwrap_or(0),
        overflows,
    }
}

/// Label pairs in transit at once: every directed link holds `c` packets of
/// `pairs` label pairs each.
fn m_of(n: usize, c: u32, pairs: usize) -> usize {
    n * (n - 1) * c as usize * pairs
}

fn own_queue_floor(n: usize, m: usize) -> usize {
    2 * (m * n + 2 * n * n - 2 * n) + 1
}

// Exhaustive data link harness.

const LINK_PAYLOADS: u64 = 12;

fn garbage(tag: u8) -> Vec<u8> {
    vec![0xEE, tag]
}

fn channel_options(tags: u8) -> Vec<Option<Packet>> {
    let mut v = vec![None];
    for tag in 0..tags {
        for kind in [PacketKind::Data, PacketKind::Ack] {
            v.push(Some(Packet {
                tag,
                kind,
                payload: garbage(2),
            }));
        }
    }
    v
}

/// Every sender state, receiver state and single-packet channel content
/// at capacity 1.
fn link_initial_states() -> Vec<(LinkState, LinkState, Option<Packet>, Option<Packet>)> {
    let c = 1;
    let sp = LinkParams::new(c, Role::Sender);
    let rp = LinkParams::new(c, Role::Receiver);
    let tags = sp.tag_space();
    let mut senders = Vec::new();
    for alt in 0..tags {
        for acks in 0..=c + 1 {
            for hold in [false, true] {
                senders.push(LinkState {
                    params: sp,
                    alt_index: alt,
                    ack_count: acks,
                    outbound: garbage(0),
                    delivered_tag: None,
                    holding_token: hold,
                });
            }
        }
    }
    let mut receivers = Vec::new();
    for dt in std::iter::once(None).chain((0..tags).map(Some)) {
        for hold in [false, true] {
            receivers.push(LinkState {
                params: rp,
                alt_index: 0,
                ack_count: 0,
                outbound: garbage(1),
                delivered_tag: dt,
                holding_token: hold,
            });
        }
    }
    let ch = channel_options(tags);
    let mut out = Vec::new();
    for s in &senders {
        for r in &receivers {
            for a in &ch {
                for b in &ch {
                    out.push((s.clone(), r.clone(), a.clone(), b.clone()));
                }
            }
        }
    }
    out
}

fn push(q: &mut VecDeque<Packet>, p: Packet, cap: usize, rng: &mut ChaCha8Rng) {
    let copies = if rng.gen_bool(0.1) { 2 } else { 1 };
    for _ in 0..copies {
        if q.len() < cap {
            q.push_back(p.clone());
        } else if rng.gen_bool(0.5) {
            let i = rng.gen_range(0..q.len());
            q.remove(i);
            q.push_back(p.clone());
        }
    }
}

/// Runs one initial state to completion under a random fair schedule and
/// returns what the receiver delivered, or `None` if the run stalled.
fn drive_link(
    mut s: LinkState,
    mut r: LinkState,
    a: Option<Packet>,
    b: Option<Packet>,
    seed: u64,
) -> Option<Vec<Vec<u8>>> {
    let cap = s.params.capacity as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s2r: VecDeque<Packet> = a.into_iter().collect();
    let mut r2s: VecDeque<Packet> = b.into_iter().collect();
    let mut next = 1u64;
    let mut delivered = Vec::new();
    for _ in 0..50_000 {
        if s.holds_token() {
            if next > LINK_PAYLOADS {
                return Some(delivered);
            }
            s.link_send(next.to_le_bytes().to_vec()).unwrap();
            next += 1;
        }
        if r.holds_token() {
            r.link_send(Vec::new()).unwrap();
        }
        match rng.gen_range(0..3) {
            0 => {
                if let Some(p) = s.on_timer() {
                    push(&mut s2r, p, cap, &mut rng);
                }
            }
            1 => {
                let Some(p) = s2r.pop_front() else { continue };
                if rng.gen_bool(0.1) {
                    continue;
                }
                for ev in r.link_on_packet(&p) {
                    match ev {
                        LinkEvent::Deliver(d) => delivered.push(d),
                        LinkEvent::Ack(tag) => {
                            if r.holds_token() {
                                r.link_send(Vec::new()).unwrap();
                            }
                            let ack = r.ack(tag);
                            push(&mut r2s, ack, cap, &mut rng);
                        }
                        LinkEvent::TokenArrived(_) => {}
                    }
                }
            }
            _ => {
                let Some(p) = r2s.pop_front() else { continue };
                if rng.gen_bool(0.1) {
                    continue;
                }
                s.link_on_packet(&p);
            }
        }
    }
    None
}

/// Garbage delivered before the real stream and real payloads skipped at
/// its start, when the rest is exactly `1..=LINK_PAYLOADS` in order.
fn link_prefix(delivered: &[Vec<u8>]) -> Option<(usize, usize)> {
    let sent: Vec<Vec<u8>> = (1..=LINK_PAYLOADS).map(|i| i.to_le_bytes().to_vec()).collect();
    (0..=delivered.len()).find_map(|i| {
        let tail = &delivered[i..];
        let lost = sent.len().checked_sub(tail.len())?;
        (tail == &sent[lost..]).then_some((i, lost))
    })
}

type Digests = Vec<(ScenarioConfig, BTreeMap<u64, [u8; 32]>)>;

/// Remembers the first few traces of a scenario for the determinism check.
fn keep<T>(digests: &mut Digests, cfg: &ScenarioConfig, runs: &[Run<T>]) {
    let d = runs
        .iter()
        .filter(|r| r.seed < DETERMINISM_SEEDS)
        .map(|r| (r.seed, r.digest))
        .collect();
    digests.push((cfg.clone(), d));
}

fn main() -> ExitCode {
    let mut rep = Report { lines: Vec::new() };
    let mut digests: Digests = Vec::new();

    // 1-3: labeling from arbitrary states with crashes.
    let lab = scenario("labeling.json");
    let runs = fuzz(&lab, 0..500, label_facts);
    keep(&mut digests, &lab, &runs);
    {
        let (bad, first) = failures(&runs, "label-convergence");
        let quiet = lab.quiet_window.unwrap_or(lab.step_budget / 4);
        let oracle_bad = runs.iter().filter(|r| !r.extra.agree || r.extra.quiet < quiet).count();
        let secs = max_secs(&runs);
        rep.add(
            1,
            "label convergence",
            bad == 0 && oracle_bad == 0 && secs < LABEL_RUN_SECS,
            format!(
                "{}/{} seeds converged, {oracle_bad} disagree with the snapshot oracle, slowest run {secs:.2}s (limit {LABEL_RUN_SECS}s){first}",
                runs.len() - bad,
                runs.len()
            ),
        );
    }
    {
        let m = m_of(lab.n, lab.link_capacity, 2);
        let n = lab.n;
        let adopt_bound = n + m;
        let create_bound = n * (n * n + m);
        let (bad, first) = failures(&runs, "adoption-bounds");
        let worst = runs.iter().map(|r| r.extra.silent_adoptions).max().unwrap_or(0);
        let worst_c = runs.iter().map(|r| r.extra.max_creations).max().unwrap_or(0);
        rep.add(
            2,
            "adoption bound",
            bad == 0 && worst <= adopt_bound && worst_c <= create_bound,
            format!(
                "max adoptions from a crashed creator {worst} (bound n+m = {adopt_bound}), max creations {worst_c} (bound {create_bound}), {bad} checker violations{first}"
            ),
        );
    }
    {
        let m = m_of(lab.n, lab.link_capacity, 2);
        let floor = own_queue_floor(lab.n, m);
        let t = run(ScenarioConfig { seed: 0, ..lab.clone() }).unwrap();
        let cap_ok = t.header.m == m && t.header.own_queue_cap >= floor;
        let (bad, first) = failures(&runs, "no-overflow");
        let fired: usize = runs.iter().map(|r| r.extra.overflows).sum();
        rep.add(
            3,
            "no queue overflow",
            cap_ok && bad == 0 && fired == 0,
            format!(
                "own queue {} (floor {floor}, m = {m}), {fired} overflow events over {} runs{first}",
                t.header.own_queue_cap,
                runs.len()
            ),
        );
    }

    // 4: counters.
    let ctr = scenario("counter.json");
    let runs = fuzz(&ctr, 0..500, |_| ());
    keep(&mut digests, &ctr, &runs);
    {
        let (bad, first) = failures(&runs, "counter-monotonicity");
        let conv = runs.iter().filter(|r| r.verdicts.iter().all(|v| v.pass)).count();
        rep.add(
            4,
            "counter monotonicity",
            bad == 0 && conv == runs.len(),
            format!(
                "{}/{} seeds strictly increasing after convergence, {conv} with every check passing{first}",
                runs.len() - bad,
                runs.len()
            ),
        );
    }

    // 5: every maximal counter starts exhausted.
    let exh = scenario("exhaustion.json");
    let runs = fuzz(&exh, 0..100, |t| {
        let alive: Vec<_> = t.snapshot.nodes.iter().filter(|n| !n.crashed).collect();
        let Some(fl) = alive[0].label else { return false };
        let created = t
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::Label(LabelEv::Create { label }) if label == fl));
        let first = t
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Counter(CounterEv::OpDone {
                    kind: OpKindRec::Increment,
                    counter: Some(c),
                    ..
                }) if c.lbl == fl => Some(c.seqn),
                _ => None,
            })
            .min();
        created && first == Some(1) && alive.iter().all(|n| n.label == Some(fl))
    });
    keep(&mut digests, &exh, &runs);
    {
        let ok = runs
            .iter()
            .filter(|r| r.extra && r.verdicts.iter().all(|v| v.pass))
            .count();
        rep.add(
            5,
            "exhaustion recovery",
            ok == runs.len(),
            format!(
                "{ok}/{} seeds created a new label and restarted increments at 1",
                runs.len()
            ),
        );
    }

    // 6: register.
    let reg = scenario("register.json");
    let seq_runs: Vec<(u64, bool, usize)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = ScenarioConfig { seed, ..reg.clone() };
            cfg.workload.clients = vec![(seed % cfg.n as u64) as u32];
            cfg.workload.ops_per_client = 10;
            cfg.workload.mix = OpMix::Register { read_percent: 50 };
            let t = run(cfg).unwrap();
            // One client, so operations are sequential: each read returns
            // the last written value.
            let mut last = String::new();
            let mut reads = 0;
            let mut ok = true;
            for e in &t.events {
                if let EventKind::Counter(CounterEv::OpDone { kind, value, .. }) = &e.kind {
                    match kind {
                        OpKindRec::Write => {}
                        OpKindRec::Read => {
                            reads += 1;
                            ok &= value.as_deref() == Some(last.as_str());
                        }
                        OpKindRec::Increment => ok = false,
                    }
                }
                if let EventKind::Counter(CounterEv::OpStart {
                    kind: OpKindRec::Write,
                    value: Some(v),
                    ..
                }) = &e.kind
                {
                    // Sequential: the write completes before the next op.
                    last = v.clone();
                }
            }
            (seed, ok && reads > 0, reads)
        })
        .collect();
    let runs = fuzz(&reg, 0..200, |_| ());
    keep(&mut digests, &reg, &runs);
    {
        let seq_bad: Vec<u64> = seq_runs.iter().filter(|r| !r.1).map(|r| r.0).collect();
        let reads: usize = seq_runs.iter().map(|r| r.2).sum();
        let (bad, first) = failures(&runs, "register-safety");
        rep.add(
            6,
            "register safety",
            seq_bad.is_empty() && bad == 0,
            format!(
                "sequential: {}/{} histories ({reads} reads) returned the written value{}; concurrent: {}/{} histories safe{first}",
                seq_runs.len() - seq_bad.len(),
                seq_runs.len(),
                if seq_bad.is_empty() { String::new() } else { format!(" (failed seeds {seq_bad:?})") },
                runs.len() - bad,
                runs.len()
            ),
        );
    }

    // 7: data link.
    {
        let states = link_initial_states();
        let results: Vec<Option<(usize, usize)>> = states
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, (s, r, a, b))| {
                (0..2u64).map(move |k| {
                    drive_link(s.clone(), r.clone(), a.clone(), b.clone(), (i as u64) << 8 | k)
                        .and_then(|d| link_prefix(&d))
                })
            })
            .collect();
        let bound = 2; // c + 1 at c = 1
        let stalled_or_bad = results.iter().filter(|r| r.is_none()).count();
        let worst_spurious = results.iter().flatten().map(|r| r.0).max().unwrap_or(0);
        let worst_lost = results.iter().flatten().map(|r| r.1).max().unwrap_or(0);
        let exhaustive_ok = stalled_or_bad == 0 && worst_spurious <= bound && worst_lost <= bound;

        let link = scenario("link.json");
        let mut fuzz_bad = 0;
        let mut fuzz_total = 0;
        let mut first = String::new();
        for c in [2, 3] {
            let cfg = ScenarioConfig {
                link_capacity: c,
                ..link.clone()
            };
            let runs = fuzz(&cfg, 0..200, |_| ());
            let (bad, f) = failures(&runs, "exactly-once-link");
            fuzz_bad += bad;
            fuzz_total += runs.len();
            if first.is_empty() {
                first = f;
            }
            keep(&mut digests, &cfg, &runs);
        }
        rep.add(
            7,
            "link exactly-once",
            exhaustive_ok && fuzz_bad == 0,
            format!(
                "c=1: {} initial states x 2 schedules, {stalled_or_bad} not exactly-once after the prefix, prefix at most {worst_spurious} spurious / {worst_lost} lost (bound {bound}); c=2,3: {}/{fuzz_total} seeds pass{first}",
                states.len(),
                fuzz_total - fuzz_bad
            ),
        );
    }

    // 8-11: failure detector and virtual synchrony.
    let fd = scenario("fd.json");
    let fd_runs = fuzz(&fd, 0..200, |t| {
        t.events.iter().filter(|e| matches!(e.kind, EventKind::Crash)).count()
    });
    keep(&mut digests, &fd, &fd_runs);
    let vs = scenario("vs.json");
    let vs_runs = fuzz(&vs, 0..500, |t| {
        t.events.iter().filter(|e| matches!(e.kind, EventKind::Crash)).count()
    });
    keep(&mut digests, &vs, &vs_runs);
    {
        let (b1, f1) = failures(&fd_runs, "fd-completeness");
        let (b2, f2) = failures(&vs_runs, "fd-completeness");
        let crashes: usize = fd_runs.iter().chain(&vs_runs).map(|r| r.extra).sum();
        rep.add(
            8,
            "failure detector completeness",
            b1 + b2 == 0 && crashes > 0,
            format!(
                "{} crash runs, {crashes} crashes, {} violations{f1}{f2}",
                fd_runs.len() + vs_runs.len(),
                b1 + b2
            ),
        );
    }
    {
        let (bad, first) = failures(&vs_runs, "virtual-synchrony");
        let secs = max_secs(&vs_runs);
        let two = vs_runs.iter().filter(|r| r.extra == 2).count();
        rep.add(
            9,
            "virtual synchrony",
            bad == 0 && secs < VS_RUN_SECS && two == vs_runs.len(),
            format!(
                "{}/{} seeds with identical delivery sets, {two} with both crashes, slowest run {secs:.2}s (limit {VS_RUN_SECS}s){first}",
                vs_runs.len() - bad,
                vs_runs.len()
            ),
        );
    }
    {
        let (bad, first) = failures(&vs_runs, "single-proposal");
        rep.add(
            10,
            "single proposal",
            bad == 0,
            format!("{bad} violations across {} runs{first}", vs_runs.len()),
        );
    }
    {
        let (bad, first) = failures(&vs_runs, "smr-agreement");
        rep.add(
            11,
            "state machine agreement",
            bad == 0,
            format!("{bad} violations across {} runs{first}", vs_runs.len()),
        );
    }

    // 12: determinism.
    {
        let mut compared = 0;
        let mut differ = Vec::new();
        for (cfg, d) in &digests {
            for (&seed, want) in d {
                let t = run(ScenarioConfig { seed, ..cfg.clone() }).unwrap();
                compared += 1;
                if &digest(&t) != want {
                    differ.push(format!("{}#{seed}", cfg.name));
                }
            }
        }
        rep.add(
            12,
            "determinism",
            differ.is_empty() && compared > 0,
            format!("{compared} re-runs, {} differ {:?}", differ.len(), differ),
        );
    }

    let failed: Vec<u32> = rep.lines.iter().filter(|l| !l.2).map(|l| l.0).collect();
    println!(
        "{} of {} criteria passed{}",
        rep.lines.len() - failed.len(),
        rep.lines.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {failed:?}")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
