use std::path::PathBuf;

use ssvs::sim::config::{CrashSpec, CrashTarget, InitMode, OpMix, Stack};
use ssvs::sim::trace::{CounterEv, EventKind, FdEv, LinkEv, OpKindRec, VsEv};
use ssvs::sim::{check, check_applicable, run, ScenarioConfig, Trace};

fn data(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "tests", "data", name].iter().collect()
}

fn golden_config() -> ScenarioConfig {
    ScenarioConfig::load(&data("clean_n3.json")).unwrap()
}

fn verdict(t: &Trace, property: &str) -> bool {
    check(t, property).unwrap().pass
}

#[test]
fn clean_run_matches_golden_trace() {
    let got = run(golden_config()).unwrap().to_jsonl();
    let want = std::fs::read(data("clean_n3.jsonl")).unwrap();
    assert!(got == want, "trace differs from tests/data/clean_n3.jsonl");
}

#[test]
fn golden_trace_passes_every_check() {
    let t = Trace::load(&data("clean_n3.jsonl")).unwrap();
    for v in check_applicable(&t) {
        assert!(v.pass, "{}: {}", v.property, v.detail);
    }
}

#[test]
fn trace_round_trips_through_jsonl() {
    let t = run(golden_config()).unwrap();
    let back = Trace::read_jsonl(&t.to_jsonl()[..]).unwrap();
    assert_eq!(back, t);
}

#[test]
fn malformed_trace_is_rejected() {
    let t = run(golden_config()).unwrap();
    let text = String::from_utf8(t.to_jsonl()).unwrap();
    // Drop every label record: events then refer to undefined labels.
    let stripped: String = text
        .lines()
        .filter(|l| !l.starts_with(r#"{"type":"label""#))
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(Trace::read_jsonl(stripped.as_bytes()).is_err());
    assert!(Trace::read_jsonl(&b"{\"type\":\"event\"}\n"[..]).is_err());
}

#[test]
fn same_seed_same_trace_other_seed_other_trace() {
    let cfg = ScenarioConfig {
        init: InitMode::Arbitrary(Default::default()),
        ..golden_config()
    };
    let a = run(cfg.clone()).unwrap().to_jsonl();
    let b = run(cfg.clone()).unwrap().to_jsonl();
    let c = run(ScenarioConfig {
        seed: cfg.seed + 1,
        ..cfg
    })
    .unwrap()
    .to_jsonl();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn altered_delivery_breaks_virtual_synchrony() {
    let mut t = run(golden_config()).unwrap();
    assert!(verdict(&t, "virtual-synchrony"));
    let e = t
        .events
        .iter_mut()
        .find(|e| matches!(&e.kind, EventKind::Vs(VsEv::Deliver { msg, .. }) if msg.iter().any(Option::is_some)))
        .expect("a non-empty delivery");
    if let EventKind::Vs(VsEv::Deliver { msg, .. }) = &mut e.kind {
        let slot = msg.iter_mut().find(|m| m.is_some()).unwrap();
        *slot = Some("forged".into());
    }
    assert!(!verdict(&t, "virtual-synchrony"));
}

#[test]
fn altered_state_breaks_agreement() {
    let mut t = run(golden_config()).unwrap();
    assert!(verdict(&t, "smr-agreement"));
    let e = t
        .events
        .iter_mut()
        .find(|e| matches!(e.kind, EventKind::Vs(VsEv::Apply { .. })))
        .unwrap();
    if let EventKind::Vs(VsEv::Apply { state, .. }) = &mut e.kind {
        *state = "00".repeat(32);
    }
    assert!(!verdict(&t, "smr-agreement"));
}

#[test]
fn repeated_proposal_is_flagged() {
    let mut t = run(golden_config()).unwrap();
    let last_fd = t
        .events
        .iter()
        .rposition(|e| matches!(e.kind, EventKind::Fd(FdEv::Suspect { .. } | FdEv::Trust { .. })))
        .map_or(0, |i| i + 1);
    let install = t
        .events
        .iter()
        .position(|e| matches!(e.kind, EventKind::Vs(VsEv::Install { .. })))
        .unwrap();
    let p = t
        .events
        .iter()
        .position(|e| matches!(e.kind, EventKind::Vs(VsEv::Propose { .. })))
        .unwrap();
    let at = install.max(last_fd) + 1;
    let dup = t.events[p].clone();
    t.events.insert(at, dup.clone());
    t.events.insert(at + 1, dup);
    assert!(!verdict(&t, "single-proposal"));
}

#[test]
fn missed_suspicion_breaks_completeness() {
    let mut cfg = golden_config();
    cfg.crash_schedule = vec![CrashSpec {
        step: 300,
        target: CrashTarget::Pid(0),
    }];
    let mut t = run(cfg).unwrap();
    assert!(verdict(&t, "fd-completeness"));
    t.events
        .retain(|e| !matches!(e.kind, EventKind::Fd(FdEv::Suspect { peer: 0 })));
    assert!(!verdict(&t, "fd-completeness"));
}

#[test]
fn duplicate_delivery_breaks_exactly_once() {
    let cfg = ScenarioConfig {
        name: "link-clean".into(),
        stack: Stack::Link,
        n: 3,
        step_budget: 4000,
        ..Default::default()
    };
    let mut t = run(cfg).unwrap();
    assert!(verdict(&t, "exactly-once-link"));
    let i = t
        .events
        .iter()
        .rposition(|e| matches!(e.kind, EventKind::Link(LinkEv::Deliver { .. })))
        .unwrap();
    let mid = t.events[..i]
        .iter()
        .rposition(|e| matches!(e.kind, EventKind::Link(LinkEv::Deliver { .. })) && e.pid == t.events[i].pid)
        .unwrap();
    let dup = t.events[mid].clone();
    t.events.insert(i, dup);
    assert!(!verdict(&t, "exactly-once-link"));
}

fn register_config() -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        name: "register".into(),
        stack: Stack::Counter,
        n: 3,
        step_budget: 8000,
        ..Default::default()
    };
    cfg.workload.clients = vec![0, 1];
    cfg.workload.ops_per_client = 6;
    cfg.workload.mix = OpMix::Register { read_percent: 50 };
    cfg.workload.start_step = 500;
    cfg.workload.think_steps = 50;
    cfg.quiet_window = Some(500);
    cfg
}

#[test]
fn forged_read_breaks_register_safety() {
    let mut t = run(register_config()).unwrap();
    assert!(verdict(&t, "register-safety"));
    let e = t
        .events
        .iter_mut()
        .find(|e| {
            matches!(
                e.kind,
                EventKind::Counter(CounterEv::OpDone {
                    kind: OpKindRec::Read,
                    ..
                })
            )
        })
        .unwrap();
    if let EventKind::Counter(CounterEv::OpDone { value, .. }) = &mut e.kind {
        *value = Some(hex_of(b"never written"));
    }
    assert!(!verdict(&t, "register-safety"));
}

fn hex_of(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

#[test]
fn reordered_increments_break_monotonicity() {
    let mut cfg = register_config();
    cfg.workload.mix = OpMix::Increment;
    let mut t = run(cfg).unwrap();
    assert!(verdict(&t, "counter-monotonicity"));
    let done: Vec<usize> = t
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.kind, EventKind::Counter(CounterEv::OpDone { .. })))
        .map(|(i, _)| i)
        .collect();
    let (a, b) = (done[0], done[done.len() - 1]);
    let take = |e: &EventKind| match e {
        EventKind::Counter(CounterEv::OpDone { counter, .. }) => counter.clone(),
        _ => unreachable!(),
    };
    let (ca, cb) = (take(&t.events[a].kind), take(&t.events[b].kind));
    for (i, c) in [(a, cb), (b, ca)] {
        if let EventKind::Counter(CounterEv::OpDone { counter, .. }) = &mut t.events[i].kind {
            *counter = c;
        }
    }
    assert!(!verdict(&t, "counter-monotonicity"));
}

#[test]
fn invalid_configs_are_rejected() {
    let base = golden_config();
    let too_many = ScenarioConfig {
        crash_schedule: vec![
            CrashSpec {
                step: 1,
                target: CrashTarget::Pid(0),
            },
            CrashSpec {
                step: 2,
                target: CrashTarget::Pid(1),
            },
        ],
        ..base.clone()
    };
    assert!(run(too_many).is_err());
    assert!(run(ScenarioConfig { n: 1, ..base.clone() }).is_err());
    assert!(ScenarioConfig::from_json(r#"{"n": 3, "bogus": 1}"#).is_err());
    assert!(check(&run(base).unwrap(), "no-such-property").is_err());
}
