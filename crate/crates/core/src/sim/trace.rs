//! JSONL run traces.
//!
//! A trace is a header line, label-table lines, event lines and a final
//! snapshot line. Labels are written once and referenced by id, since a
//! safe-mode label carries thousands of antistings.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::counter::Counter;
use crate::error::TraceError;
use crate::label::{Label, ProcessorId};
use crate::sim::config::ScenarioConfig;
use crate::vs::View;

pub type LabelRef = u32;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CounterRec {
    pub lbl: LabelRef,
    #[serde(with = "crate::sim::wide")]
    pub seqn: u128,
    pub wid: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRec {
    pub id: Option<CounterRec>,
    pub set: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKindRec {
    Increment,
    Write,
    Read,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum LabelEv {
    Adopt { label: LabelRef },
    Create { label: LabelRef },
    Cancel { label: LabelRef },
    PurgeStale,
    Overflow { queue: u32 },
    Oversized { inputs: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum CounterEv {
    OpStart {
        op: u64,
        kind: OpKindRec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<String>,
    },
    /// `counter` is absent for a read that found no agreed label.
    OpDone {
        op: u64,
        kind: OpKindRec,
        counter: Option<CounterRec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum LinkEv {
    Send { peer: u32, payload: String },
    Deliver { peer: u32, payload: String },
    Token { peer: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum FdEv {
    /// Trusted set when the run starts.
    Init {
        trusted: Vec<u32>,
    },
    Suspect {
        peer: u32,
    },
    Trust {
        peer: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum VsEv {
    Propose {
        view: ViewRec,
    },
    Install {
        view: ViewRec,
    },
    Deliver {
        view: Option<CounterRec>,
        #[serde(with = "crate::sim::wide")]
        rnd: u128,
        msg: Vec<Option<String>>,
    },
    Apply {
        view: Option<CounterRec>,
        #[serde(with = "crate::sim::wide")]
        rnd: u128,
        state: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum EventKind {
    Label(LabelEv),
    Counter(CounterEv),
    Link(LinkEv),
    Fd(FdEv),
    Vs(VsEv),
    Crash,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub step: u64,
    pub pid: u32,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: u32,
    pub config: ScenarioConfig,
    pub m: usize,
    pub own_queue_cap: usize,
    pub other_queue_cap: usize,
    pub k: u32,
    pub w: u32,
    #[serde(with = "crate::sim::wide")]
    pub threshold: u128,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsSnapshot {
    pub view: ViewRec,
    pub status: String,
    #[serde(with = "crate::sim::wide")]
    pub rnd: u128,
    pub crd: Option<u32>,
    pub applied: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub pid: u32,
    pub crashed: bool,
    pub label: Option<LabelRef>,
    pub counter: Option<CounterRec>,
    pub trusted: Option<Vec<u32>>,
    pub vs: Option<VsSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub steps: u64,
    pub nodes: Vec<NodeSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Header(Box<TraceHeader>),
    Label { id: LabelRef, text: String },
    Event(TraceEvent),
    Snapshot(Snapshot),
}

/// Assigns ids to labels in order of first use.
#[derive(Debug, Default)]
pub struct LabelTable {
    labels: Vec<Label>,
    index: HashMap<Label, LabelRef>,
}

impl LabelTable {
    pub fn intern(&mut self, l: &Label) -> LabelRef {
        if let Some(&id) = self.index.get(l) {
            return id;
        }
        let id = self.labels.len() as LabelRef;
        self.labels.push(l.clone());
        self.index.insert(l.clone(), id);
        id
    }

    pub fn counter(&mut self, c: &Counter) -> CounterRec {
        CounterRec {
            lbl: self.intern(&c.lbl),
            seqn: c.seqn,
            wid: c.wid.0,
        }
    }

    pub fn view(&mut self, v: &View) -> ViewRec {
        ViewRec {
            id: v.id.as_ref().map(|c| self.counter(c)),
            set: v.set.iter().map(|p| p.0).collect(),
        }
    }

    pub fn into_labels(self) -> Vec<Label> {
        self.labels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub labels: Vec<Label>,
    pub events: Vec<TraceEvent>,
    pub snapshot: Snapshot,
}

fn max_ref(kind: &EventKind) -> Option<LabelRef> {
    let c = |c: &Option<CounterRec>| c.as_ref().map(|c| c.lbl);
    match kind {
        EventKind::Label(LabelEv::Adopt { label } | LabelEv::Create { label } | LabelEv::Cancel { label }) => {
            Some(*label)
        }
        EventKind::Counter(CounterEv::OpDone { counter, .. }) => c(counter),
        EventKind::Vs(VsEv::Propose { view } | VsEv::Install { view }) => c(&view.id),
        EventKind::Vs(VsEv::Deliver { view, .. } | VsEv::Apply { view, .. }) => c(view),
        _ => None,
    }
}

impl Trace {
    pub fn label(&self, r: LabelRef) -> &Label {
        &self.labels[r as usize]
    }

    pub fn counter(&self, c: &CounterRec) -> Counter {
        Counter::new(self.label(c.lbl).clone(), c.seqn, ProcessorId(c.wid))
    }

    pub fn n(&self) -> usize {
        self.header.config.n
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let line = |r: &Record, w: &mut W| -> std::io::Result<()> {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")
        };
        line(&Record::Header(Box::new(self.header.clone())), &mut w)?;
        let mut emitted = 0usize;
        let mut emit_upto = |upto: usize, w: &mut W| -> std::io::Result<()> {
            while emitted <= upto && emitted < self.labels.len() {
                line(
                    &Record::Label {
                        id: emitted as LabelRef,
                        text: self.labels[emitted].to_string(),
                    },
                    w,
                )?;
                emitted += 1;
            }
            Ok(())
        };
        for e in &self.events {
            if let Some(r) = max_ref(&e.kind) {
                emit_upto(r as usize, &mut w)?;
            }
            line(&Record::Event(e.clone()), &mut w)?;
        }
        emit_upto(usize::MAX - 1, &mut w)?;
        line(&Record::Snapshot(self.snapshot.clone()), &mut w)?;
        w.flush()
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut header = None;
        let mut labels = Vec::new();
        let mut events = Vec::new();
        let mut snapshot = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| TraceError::Malformed { line: i + 1, msg };
            match serde_json::from_str::<Record>(&line).map_err(|e| bad(e.to_string()))? {
                Record::Header(h) => header = Some(*h),
                Record::Label { id, text } => {
                    if id as usize != labels.len() {
                        return Err(bad(format!("label id {id} out of order")));
                    }
                    labels.push(text.parse::<Label>().map_err(|e| bad(e.to_string()))?);
                }
                Record::Event(e) => {
                    if max_ref(&e.kind).is_some_and(|r| r as usize >= labels.len()) {
                        return Err(bad("reference to an undefined label".into()));
                    }
                    events.push(e);
                }
                Record::Snapshot(s) => snapshot = Some(s),
            }
        }
        let missing = |what: &str| TraceError::Malformed {
            line: 0,
            msg: format!("missing {what}"),
        };
        Ok(Trace {
            header: header.ok_or_else(|| missing("header"))?,
            labels,
            events,
            snapshot: snapshot.ok_or_else(|| missing("snapshot"))?,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Trace, TraceError> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}
