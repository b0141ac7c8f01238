//! Bounded epoch labels.
//!
//! A label is a triple `⟨creator, sting, antistings⟩` over the domain
//! `D = [1, k²+1]`. Labels of different creators are ordered by creator id;
//! labels of one creator are ordered through their stings and antistings and
//! may be incomparable.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::LabelError;

/// Identifier of a processor, in `[0, n)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessorId(pub u32);

impl ProcessorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for ProcessorId {
    fn from(i: usize) -> Self {
        ProcessorId(i as u32)
    }
}

impl fmt::Display for ProcessorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Sizing of the label domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeParams {
    k: u32,
}

impl SchemeParams {
    /// Largest `k` whose domain `k²+1` still fits a `u32` sting.
    pub const MAX_K: u32 = 65_535;

    pub fn new(k: u32) -> Result<Self, LabelError> {
        if k == 0 || k > Self::MAX_K {
            return Err(LabelError::InvalidK(k));
        }
        Ok(SchemeParams { k })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn domain_size(&self) -> u32 {
        self.k * self.k + 1
    }

    fn in_domain(&self, x: u32) -> bool {
        x >= 1 && x <= self.domain_size()
    }
}

/// Result of comparing two labels (or two counters).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelOrdering {
    Less,
    Greater,
    Equal,
    Incomparable,
}

impl LabelOrdering {
    pub fn reverse(self) -> Self {
        match self {
            LabelOrdering::Less => LabelOrdering::Greater,
            LabelOrdering::Greater => LabelOrdering::Less,
            o => o,
        }
    }
}

#[derive(PartialEq, Eq, Hash)]
struct LabelInner {
    creator: ProcessorId,
    sting: u32,
    antistings: Box<[u32]>,
}

/// An immutable epoch label. Cloning is cheap.
#[derive(Clone)]
pub struct Label(Arc<LabelInner>);

impl Label {
    /// Builds a label, rejecting anything outside the domain of `params`.
    pub fn new(
        params: &SchemeParams,
        creator: ProcessorId,
        sting: u32,
        antistings: impl IntoIterator<Item = u32>,
    ) -> Result<Label, LabelError> {
        if !params.in_domain(sting) {
            return Err(LabelError::StingOutOfDomain {
                sting,
                domain: params.domain_size(),
            });
        }
        let mut anti: Vec<u32> = antistings.into_iter().collect();
        anti.sort_unstable();
        anti.dedup();
        if let Some(&bad) = anti.iter().find(|&&a| !params.in_domain(a)) {
            return Err(LabelError::AntistingOutOfDomain {
                value: bad,
                domain: params.domain_size(),
            });
        }
        if anti.len() != params.k as usize {
            return Err(LabelError::AntistingsSize {
                got: anti.len(),
                k: params.k,
            });
        }
        Ok(Label::from_sorted(creator, sting, anti))
    }

    /// Builds a label from possibly corrupt parts: the sting is clamped into
    /// the domain and the antistings are clamped, deduplicated, truncated to
    /// the `k` smallest and padded with the smallest unused domain values.
    pub fn normalized(
        params: &SchemeParams,
        creator: ProcessorId,
        sting: u32,
        antistings: impl IntoIterator<Item = u32>,
    ) -> Label {
        let d = params.domain_size();
        let sting = sting.clamp(1, d);
        let mut anti: Vec<u32> = antistings.into_iter().map(|a| a.clamp(1, d)).collect();
        anti.sort_unstable();
        anti.dedup();
        anti.truncate(params.k as usize);
        pad_smallest(&mut anti, params.k as usize);
        Label::from_sorted(creator, sting, anti)
    }

    fn from_sorted(creator: ProcessorId, sting: u32, antistings: Vec<u32>) -> Label {
        Label(Arc::new(LabelInner {
            creator,
            sting,
            antistings: antistings.into_boxed_slice(),
        }))
    }

    pub fn creator(&self) -> ProcessorId {
        self.0.creator
    }

    pub fn sting(&self) -> u32 {
        self.0.sting
    }

    /// Antistings in ascending order.
    pub fn antistings(&self) -> &[u32] {
        &self.0.antistings
    }

    pub fn has_antisting(&self, x: u32) -> bool {
        self.0.antistings.binary_search(&x).is_ok()
    }

    /// True if the label is structurally valid for `params`.
    pub fn is_valid_for(&self, params: &SchemeParams) -> bool {
        params.in_domain(self.sting())
            && self.antistings().len() == params.k as usize
            && self.antistings().iter().all(|&a| params.in_domain(a))
    }

    /// Re-normalizes the label for `params` if it is not valid for it.
    pub fn clamp_to(&self, params: &SchemeParams) -> Label {
        if self.is_valid_for(params) {
            self.clone()
        } else {
            Label::normalized(params, self.creator(), self.sting(), self.antistings().iter().copied())
        }
    }
}

fn pad_smallest(sorted: &mut Vec<u32>, k: usize) {
    let have = sorted.len();
    let mut x = 1u32;
    while sorted.len() < k {
        if sorted[..have].binary_search(&x).is_err() {
            sorted.push(x);
        }
        x += 1;
    }
    sorted.sort_unstable();
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}

impl Eq for Label {}

impl Hash for Label {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.hash(state)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{{", self.creator(), self.sting())?;
        for (i, a) in self.antistings().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.antistings().len() <= 8 {
            write!(f, "⟨{self}⟩")
        } else {
            write!(
                f,
                "⟨{}:{}:{{{} antistings}}⟩",
                self.creator(),
                self.sting(),
                self.antistings().len()
            )
        }
    }
}

impl FromStr for Label {
    type Err = LabelError;

    /// Parses the canonical rendering `creator:sting:{a1,a2,...}`. Domain
    /// membership is not checked here; see [`Label::is_valid_for`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LabelError::Parse(s.to_string());
        let mut parts = s.splitn(3, ':');
        let creator: u32 = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let sting: u32 = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let rest = parts.next().ok_or_else(bad)?.trim();
        let inner = rest
            .strip_prefix('{')
            .and_then(|r| r.strip_suffix('}'))
            .ok_or_else(bad)?;
        let mut anti = Vec::new();
        for tok in inner.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            anti.push(tok.parse::<u32>().map_err(|_| bad())?);
        }
        anti.sort_unstable();
        anti.dedup();
        Ok(Label::from_sorted(ProcessorId(creator), sting, anti))
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The `≺_lb` relation.
pub fn cmp_label(a: &Label, b: &Label) -> LabelOrdering {
    if a == b {
        return LabelOrdering::Equal;
    }
    if a.creator() != b.creator() {
        return if a.creator() < b.creator() {
            LabelOrdering::Less
        } else {
            LabelOrdering::Greater
        };
    }
    let a_in_b = b.has_antisting(a.sting());
    let b_in_a = a.has_antisting(b.sting());
    match (a_in_b, b_in_a) {
        (true, false) => LabelOrdering::Less,
        (false, true) => LabelOrdering::Greater,
        _ => LabelOrdering::Incomparable,
    }
}

/// True iff `canceller` makes `target` obsolete: the two are incomparable,
/// or they share a creator and `target` is smaller.
pub fn cancels(canceller: &Label, target: &Label) -> bool {
    match cmp_label(target, canceller) {
        LabelOrdering::Incomparable => true,
        LabelOrdering::Less => target.creator() == canceller.creator(),
        _ => false,
    }
}

/// Creates a label of `creator` that is greater than every input label of
/// the same creator.
///
/// Picks are smallest-first. When the input stings together with the input
/// antistings cover all of `D`, the sting is taken from outside the input
/// antistings alone, which still orders the result above every input.
pub fn next_label(params: &SchemeParams, creator: ProcessorId, inputs: &[Label]) -> Result<Label, LabelError> {
    let mut distinct: Vec<&Label> = Vec::with_capacity(inputs.len());
    for l in inputs {
        if !distinct.contains(&l) {
            distinct.push(l);
        }
    }
    if distinct.len() > params.k as usize {
        return Err(LabelError::TooManyInputs {
            got: distinct.len(),
            k: params.k,
        });
    }
    let d = params.domain_size();
    let mut anti: Vec<u32> = distinct.iter().map(|l| l.sting().clamp(1, d)).collect();
    anti.sort_unstable();
    anti.dedup();
    pad_smallest(&mut anti, params.k as usize);

    let mut excluded: Vec<u32> = distinct.iter().flat_map(|l| l.antistings().iter().copied()).collect();
    excluded.sort_unstable();
    excluded.dedup();

    let mut both = excluded.clone();
    both.extend_from_slice(&anti);
    both.sort_unstable();
    both.dedup();

    let sting = match smallest_missing(&both) {
        s if s <= d => s,
        _ => smallest_missing(&excluded),
    };
    debug_assert!(sting <= d);
    Ok(Label::from_sorted(creator, sting, anti))
}

fn smallest_missing(sorted: &[u32]) -> u32 {
    let mut next = 1u32;
    for &v in sorted {
        if v == next {
            next += 1;
        } else if v > next {
            break;
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(k: u32) -> SchemeParams {
        SchemeParams::new(k).unwrap()
    }

    fn l(k: u32, c: u32, s: u32, a: &[u32]) -> Label {
        Label::new(&p(k), ProcessorId(c), s, a.iter().copied()).unwrap()
    }

    #[test]
    fn creator_order_dominates() {
        assert_eq!(
            cmp_label(&l(2, 1, 2, &[1, 3]), &l(2, 2, 2, &[1, 3])),
            LabelOrdering::Less
        );
        assert_eq!(
            cmp_label(&l(2, 1, 2, &[1, 3]), &l(2, 1, 2, &[1, 3])),
            LabelOrdering::Equal
        );
    }

    #[test]
    fn mutual_stings_are_incomparable() {
        let a = l(2, 1, 2, &[4, 5]);
        let b = l(2, 1, 4, &[2, 3]);
        assert_eq!(cmp_label(&a, &b), LabelOrdering::Incomparable);
        assert!(cancels(&b, &a));
        assert!(cancels(&a, &b));
        assert!(!cancels(&a, &a));
    }

    #[test]
    fn next_label_smallest_first() {
        let out = next_label(&p(2), ProcessorId(3), &[l(2, 3, 3, &[1, 2])]).unwrap();
        assert_eq!(out, l(2, 3, 4, &[1, 3]));
        let fresh = next_label(&p(2), ProcessorId(3), &[]).unwrap();
        assert_eq!(fresh, l(2, 3, 3, &[1, 2]));
    }

    #[test]
    fn next_label_falls_back_when_domain_is_covered() {
        let a = l(2, 0, 5, &[1, 2]);
        let b = l(2, 0, 4, &[1, 3]);
        let out = next_label(&p(2), ProcessorId(0), &[a.clone(), b.clone()]).unwrap();
        assert_eq!(cmp_label(&a, &out), LabelOrdering::Less);
        assert_eq!(cmp_label(&b, &out), LabelOrdering::Less);
    }

    #[test]
    fn next_label_rejects_oversized_input() {
        let ins = [l(2, 0, 3, &[1, 2]), l(2, 0, 4, &[1, 2]), l(2, 0, 5, &[1, 2])];
        assert!(matches!(
            next_label(&p(2), ProcessorId(0), &ins),
            Err(LabelError::TooManyInputs { got: 3, k: 2 })
        ));
    }

    #[test]
    fn canonical_rendering_round_trips() {
        let a = l(3, 7, 9, &[5, 1, 3]);
        assert_eq!(a.to_string(), "7:9:{1,3,5}");
        assert_eq!(a.to_string().parse::<Label>().unwrap(), a);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "\"7:9:{1,3,5}\"");
        assert_eq!(serde_json::from_str::<Label>(&json).unwrap(), a);
    }

    #[test]
    fn normalization_clamps_and_pads() {
        let n = Label::normalized(&p(2), ProcessorId(0), 99, [0, 0, 77]);
        assert_eq!(n, l(2, 0, 5, &[1, 5]));
        let n = Label::normalized(&p(3), ProcessorId(0), 2, []);
        assert_eq!(n, l(3, 0, 2, &[1, 2, 3]));
        let n = Label::normalized(&p(3), ProcessorId(0), 2, [2, 9, 10, 4]);
        assert_eq!(n, l(3, 0, 2, &[2, 4, 9]));
    }

    #[test]
    fn construction_validates() {
        assert!(Label::new(&p(2), ProcessorId(0), 6, [1, 2]).is_err());
        assert!(Label::new(&p(2), ProcessorId(0), 1, [1]).is_err());
        assert!(Label::new(&p(2), ProcessorId(0), 1, [0, 2]).is_err());
        assert!(SchemeParams::new(0).is_err());
    }
}
