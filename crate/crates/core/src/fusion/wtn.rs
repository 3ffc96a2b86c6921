//! Word transition network over several systems' hypotheses, and per-slot
//! voting over it.
//!
//! Ties between equally cheap alignments are broken by system order, so the
//! network depends on that order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::HypothesisWord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WtnEntry {
    pub word: String,
    pub confidence: f64,
    pub start_s: f64,
    pub dur_s: f64,
    pub lm_score: Option<f64>,
}

impl From<&HypothesisWord> for WtnEntry {
    fn from(w: &HypothesisWord) -> Self {
        Self { word: w.word.clone(), confidence: w.confidence, start_s: w.start_s, dur_s: w.dur_s, lm_score: w.lm_score }
    }
}

/// One correspondence set: entry `i` belongs to system `i`, `None` is NULL.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub entries: Vec<Option<WtnEntry>>,
}

impl Slot {
    pub fn contains_word(&self, word: &str) -> bool {
        self.entries.iter().flatten().any(|e| e.word == word)
    }

    fn span(&self) -> Option<(f64, f64)> {
        self.entries.iter().flatten().fold(None, |acc, e| {
            let (s, t) = (e.start_s, e.start_s + e.dur_s);
            Some(match acc {
                None => (s, t),
                Some((a, b)) => (a.min(s), b.max(t)),
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordTransitionNetwork {
    pub n_systems: usize,
    pub slots: Vec<Slot>,
    /// Edit cost paid when each system was merged; the first is always 0.
    pub step_costs: Vec<u32>,
}

impl WordTransitionNetwork {
    pub fn total_cost(&self) -> u32 {
        self.step_costs.iter().sum()
    }

    /// Words of one system in slot order, NULLs skipped.
    pub fn system_words(&self, system: usize) -> Vec<&str> {
        self.slots.iter().filter_map(|s| s.entries[system].as_ref().map(|e| e.word.as_str())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Diag,
    Del,
    Ins,
}

/// Lexicographic (edit cost, time gap) so temporal overlap breaks ties.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost(u32, f64);

impl Cost {
    fn add(self, edit: u32, gap: f64) -> Self {
        Cost(self.0 + edit, self.1 + gap)
    }

    fn add_cost(self, other: Cost) -> Self {
        self.add(other.0, other.1)
    }

    fn better(self, other: Self) -> bool {
        (self.0, self.1).partial_cmp(&(other.0, other.1)) == Some(Ordering::Less)
    }
}

fn time_gap(slot: &Slot, w: &HypothesisWord) -> f64 {
    match slot.span() {
        Some((a, b)) => (w.start_s.max(a) - w.end_s().min(b)).max(0.0),
        None => 0.0,
    }
}

/// Align one system against the network: match 0, substitution 1,
/// NULL against a slot 1, new slot 1. Equal costs prefer the diagonal,
/// then NULL, then a new slot.
fn align_system(slots: &[Slot], words: &[HypothesisWord]) -> (u32, Vec<Step>) {
    let (n, m) = (slots.len(), words.len());
    let w = m + 1;
    let mut cost = vec![Cost(0, 0.0); (n + 1) * w];
    let mut back = vec![Step::Diag; (n + 1) * w];
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best: Option<(Cost, Step)> = None;
            let mut offer = |c: Cost, s: Step| {
                if best.map_or(true, |(b, _)| c.better(b)) {
                    best = Some((c, s));
                }
            };
            if i > 0 && j > 0 {
                let sub = u32::from(!slots[i - 1].contains_word(&words[j - 1].word));
                offer(cost[(i - 1) * w + j - 1].add(sub, time_gap(&slots[i - 1], &words[j - 1])), Step::Diag);
            }
            if i > 0 {
                offer(cost[(i - 1) * w + j].add(1, 0.0), Step::Del);
            }
            if j > 0 {
                offer(cost[i * w + j - 1].add(1, 0.0), Step::Ins);
            }
            let (c, s) = best.expect("at least one predecessor");
            cost[i * w + j] = c;
            back[i * w + j] = s;
        }
    }
    let mut steps = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let s = back[i * w + j];
        steps.push(s);
        match s {
            Step::Diag => {
                i -= 1;
                j -= 1;
            }
            Step::Del => i -= 1,
            Step::Ins => j -= 1,
        }
    }
    steps.reverse();
    (cost[n * w + m].0, steps)
}

/// Lattices with at most this many cells are aligned jointly; larger
/// inputs are merged one system at a time.
pub const JOINT_CELL_LIMIT: usize = 1 << 18;
const MAX_JOINT_SYSTEMS: usize = 8;

/// Edit cost of one column: every system after the first pays 0 for a word
/// already present among earlier systems in the column, 1 for a different
/// word or a word opening the column, and 1 for NULL once an earlier system
/// has a word there. The gap sums each word's distance to the span of the
/// earlier words.
fn column_cost<'a>(entries: impl Iterator<Item = Option<&'a HypothesisWord>>, mut per_system: impl FnMut(usize, u32)) -> Cost {
    let mut total = Cost(0, 0.0);
    let mut span: Option<(f64, f64)> = None;
    let mut earlier: [&str; MAX_JOINT_SYSTEMS] = [""; MAX_JOINT_SYSTEMS];
    let mut n_earlier = 0;
    for (k, e) in entries.enumerate() {
        let (edit, gap) = match (e, span) {
            (Some(_), _) if k == 0 => (0, 0.0),
            (Some(_), None) => (1, 0.0),
            (Some(w), Some((a, b))) => (
                u32::from(!earlier[..n_earlier].contains(&w.word.as_str())),
                (w.start_s.max(a) - w.end_s().min(b)).max(0.0),
            ),
            (None, Some(_)) => (1, 0.0),
            (None, None) => (0, 0.0),
        };
        if let Some(w) = e {
            span = Some(span.map_or((w.start_s, w.end_s()), |(a, b)| (a.min(w.start_s), b.max(w.end_s()))));
            if n_earlier < MAX_JOINT_SYSTEMS {
                earlier[n_earlier] = &w.word;
                n_earlier += 1;
            }
        }
        per_system(k, edit);
        total = total.add(edit, gap);
    }
    total
}

/// Column masks, larger columns first, then by ascending mask.
fn column_masks(n: usize) -> Vec<u32> {
    let mut masks: Vec<u32> = (1..1u32 << n).collect();
    masks.sort_by_key(|m| (std::cmp::Reverse(m.count_ones()), *m));
    masks
}

/// Optimal multiple alignment by DP over the product of prefix lengths.
/// Returns the columns as masks of contributing systems, in order.
fn align_joint(systems: &[Vec<HypothesisWord>]) -> Vec<u32> {
    let n = systems.len();
    let radix: Vec<usize> = systems.iter().map(|s| s.len() + 1).collect();
    let mut stride = vec![1usize; n];
    for k in 1..n {
        stride[k] = stride[k - 1] * radix[k - 1];
    }
    let cells = stride[n - 1] * radix[n - 1];
    let masks: Vec<(u32, usize)> = column_masks(n)
        .into_iter()
        .map(|m| (m, (0..n).filter(|k| m & (1 << k) != 0).map(|k| stride[k]).sum()))
        .collect();
    let mut cost = vec![Cost(0, 0.0); cells];
    let mut back = vec![0u32; cells];
    let mut pos = vec![0usize; n];
    for idx in 1..cells {
        // advance the mixed-radix counter
        for k in 0..n {
            pos[k] += 1;
            if pos[k] < radix[k] {
                break;
            }
            pos[k] = 0;
        }
        let avail = (0..n).filter(|&k| pos[k] > 0).fold(0u32, |a, k| a | 1 << k);
        let mut best: Option<(Cost, u32)> = None;
        for &(m, offset) in &masks {
            if m & !avail != 0 {
                continue;
            }
            let col = (0..n).map(|k| (m & (1 << k) != 0).then(|| &systems[k][pos[k] - 1]));
            let c = cost[idx - offset].add_cost(column_cost(col, |_, _| {}));
            if best.map_or(true, |(b, _)| c.better(b)) {
                best = Some((c, m));
            }
        }
        let (c, m) = best.expect("at least one predecessor");
        cost[idx] = c;
        back[idx] = m;
    }
    let mut columns = Vec::new();
    let mut idx = cells - 1;
    while idx > 0 {
        let m = back[idx];
        columns.push(m);
        idx -= (0..n).filter(|k| m & (1 << k) != 0).map(|k| stride[k]).sum::<usize>();
    }
    columns.reverse();
    columns
}

fn build_joint(systems: &[Vec<HypothesisWord>]) -> WordTransitionNetwork {
    let n = systems.len();
    let mut next = vec![0usize; n];
    let mut step_costs = vec![0u32; n];
    let mut slots = Vec::new();
    for m in align_joint(systems) {
        let col: Vec<Option<&HypothesisWord>> = (0..n)
            .map(|k| {
                (m & (1 << k) != 0).then(|| {
                    next[k] += 1;
                    &systems[k][next[k] - 1]
                })
            })
            .collect();
        column_cost(col.iter().copied(), |k, e| step_costs[k] += e);
        slots.push(Slot { entries: col.into_iter().map(|e| e.map(WtnEntry::from)).collect() });
    }
    WordTransitionNetwork { n_systems: n, slots, step_costs }
}

fn build_progressive(systems: &[Vec<HypothesisWord>]) -> WordTransitionNetwork {
    let mut net = WordTransitionNetwork::default();
    for (k, words) in systems.iter().enumerate() {
        if k == 0 {
            net.slots = words.iter().map(|w| Slot { entries: vec![Some(WtnEntry::from(w))] }).collect();
            net.step_costs.push(0);
            net.n_systems = 1;
            continue;
        }
        let (c, steps) = align_system(&net.slots, words);
        let mut old = std::mem::take(&mut net.slots).into_iter();
        let mut new_words = words.iter();
        for s in steps {
            net.slots.push(match s {
                Step::Diag => {
                    let mut slot = old.next().expect("slot");
                    slot.entries.push(Some(new_words.next().expect("word").into()));
                    slot
                }
                Step::Del => {
                    let mut slot = old.next().expect("slot");
                    slot.entries.push(None);
                    slot
                }
                Step::Ins => {
                    let mut entries = vec![None; k];
                    entries.push(Some(new_words.next().expect("word").into()));
                    Slot { entries }
                }
            });
        }
        net.step_costs.push(c);
        net.n_systems = k + 1;
    }
    net
}

/// Align all systems into one network. Small inputs get the minimum total
/// edit cost over every multiple alignment (time gap as tie-break); inputs
/// whose lattice exceeds [`JOINT_CELL_LIMIT`] are merged progressively, each
/// system aligned optimally against the network built so far.
pub fn build_wtn(systems: &[Vec<HypothesisWord>]) -> WordTransitionNetwork {
    if systems.is_empty() {
        return WordTransitionNetwork::default();
    }
    let cells = systems.iter().try_fold(1usize, |acc, s| acc.checked_mul(s.len() + 1));
    if systems.len() <= MAX_JOINT_SYSTEMS && cells.is_some_and(|c| c <= JOINT_CELL_LIMIT) {
        build_joint(systems)
    } else {
        build_progressive(systems)
    }
}

/// Convenience for plain word lists (all times zero, confidence 1).
pub fn build_wtn_from_words<S: AsRef<str>>(systems: &[Vec<S>]) -> WordTransitionNetwork {
    let systems: Vec<Vec<HypothesisWord>> = systems
        .iter()
        .map(|s| s.iter().map(|w| HypothesisWord::new(w.as_ref(), 0.0, 0.0, 1.0)).collect())
        .collect();
    build_wtn(&systems)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoteConfig {
    /// Weight of word frequency against confidence.
    pub alpha: f64,
    pub null_confidence: f64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self { alpha: 0.5, null_confidence: 0.7 }
    }
}

impl VoteConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("null_confidence", self.null_confidence)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} {v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// NULL sorts as this token when breaking ties lexicographically.
const NULL_TOKEN: &str = "@";

struct Candidate<'a> {
    word: Option<&'a str>,
    count: usize,
    best: Option<&'a WtnEntry>,
}

impl Candidate<'_> {
    fn key(&self) -> &str {
        self.word.unwrap_or(NULL_TOKEN)
    }
}

/// Per slot: score(w) = alpha·N_w/N + (1−alpha)·max conf(w), NULL using
/// `null_confidence`. Ties go to the more frequent, then the smaller word.
pub fn vote(wtn: &WordTransitionNetwork, config: &VoteConfig) -> Vec<HypothesisWord> {
    let n = wtn.n_systems.max(1) as f64;
    let mut out = Vec::new();
    for slot in &wtn.slots {
        let mut cands: Vec<Candidate> = Vec::new();
        for e in &slot.entries {
            let word = e.as_ref().map(|e| e.word.as_str());
            let c = match cands.iter_mut().find(|c| c.word == word) {
                Some(c) => c,
                None => {
                    cands.push(Candidate { word, count: 0, best: None });
                    cands.last_mut().expect("just pushed")
                }
            };
            c.count += 1;
            if let Some(e) = e {
                if c.best.map_or(true, |b| e.confidence > b.confidence) {
                    c.best = Some(e);
                }
            }
        }
        let score = |c: &Candidate| {
            let conf = c.best.map_or(config.null_confidence, |e| e.confidence);
            config.alpha * c.count as f64 / n + (1.0 - config.alpha) * conf
        };
        let winner = cands
            .iter()
            .map(|c| (score(c), c))
            .max_by(|(sa, a), (sb, b)| {
                sa.total_cmp(sb).then(a.count.cmp(&b.count)).then_with(|| b.key().cmp(a.key()))
            })
            .expect("slot has entries");
        if let (s, Candidate { best: Some(e), .. }) = winner {
            out.push(HypothesisWord {
                word: e.word.clone(),
                start_s: e.start_s,
                dur_s: e.dur_s,
                confidence: s.clamp(0.0, 1.0),
                lm_score: e.lm_score,
            });
        }
    }
    out
}
