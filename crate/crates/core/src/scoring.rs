//! Word error rate by reference/hypothesis alignment with sclite-style
//! weights, plus STM and plain-transcript reference readers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::UtteranceId;

pub const COST_SUBSTITUTION: u32 = 4;
pub const COST_INSERTION: u32 = 3;
pub const COST_DELETION: u32 = 3;

/// One alignment step; indices point into the reference and hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Correct { r: usize, h: usize },
    Substitution { r: usize, h: usize },
    Insertion { h: usize },
    Deletion { r: usize },
}

impl AlignOp {
    pub fn cost(&self) -> u32 {
        match self {
            AlignOp::Correct { .. } => 0,
            AlignOp::Substitution { .. } => COST_SUBSTITUTION,
            AlignOp::Insertion { .. } => COST_INSERTION,
            AlignOp::Deletion { .. } => COST_DELETION,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub correct: usize,
    pub ref_words: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn wer_percent(&self) -> Result<f64> {
        if self.ref_words == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(100.0 * self.errors() as f64 / self.ref_words as f64)
    }

    pub fn from_ops(ops: &[AlignOp]) -> Self {
        let mut c = ErrorCounts::default();
        for op in ops {
            match op {
                AlignOp::Correct { .. } => c.correct += 1,
                AlignOp::Substitution { .. } => c.substitutions += 1,
                AlignOp::Insertion { .. } => c.insertions += 1,
                AlignOp::Deletion { .. } => c.deletions += 1,
            }
        }
        c.ref_words = c.correct + c.substitutions + c.deletions;
        c
    }
}

impl std::ops::AddAssign for ErrorCounts {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.correct += o.correct;
        self.ref_words += o.ref_words;
    }
}

impl std::iter::Sum for ErrorCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut total = ErrorCounts::default();
        for c in iter {
            total += c;
        }
        total
    }
}

/// Minimal-cost alignment. Among equal-cost paths the backtrace prefers
/// correct, then substitution, then insertion, then deletion.
pub fn align<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> Vec<AlignOp> {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut cost = vec![0u32; (n + 1) * w];
    for i in 0..=n {
        for j in 0..=m {
            cost[i * w + j] = if i == 0 {
                j as u32 * COST_INSERTION
            } else if j == 0 {
                i as u32 * COST_DELETION
            } else {
                let diag = cost[(i - 1) * w + j - 1]
                    + if reference[i - 1].as_ref() == hypothesis[j - 1].as_ref() { 0 } else { COST_SUBSTITUTION };
                let ins = cost[i * w + j - 1] + COST_INSERTION;
                let del = cost[(i - 1) * w + j] + COST_DELETION;
                diag.min(ins).min(del)
            };
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let prev = cost[(i - 1) * w + j - 1];
            if same && prev == here {
                ops.push(AlignOp::Correct { r: i - 1, h: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && prev + COST_SUBSTITUTION == here {
                ops.push(AlignOp::Substitution { r: i - 1, h: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && cost[i * w + j - 1] + COST_INSERTION == here {
            ops.push(AlignOp::Insertion { h: j - 1 });
            j -= 1;
        } else {
            ops.push(AlignOp::Deletion { r: i - 1 });
            i -= 1;
        }
    }
    ops.reverse();
    ops
}

pub fn align_and_count<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> ErrorCounts {
    ErrorCounts::from_ops(&align(reference, hypothesis))
}

/// Per hypothesis word, whether alignment marks it correct.
pub fn hypothesis_correctness<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> Vec<bool> {
    let mut correct = vec![false; hypothesis.len()];
    for op in align(reference, hypothesis) {
        if let AlignOp::Correct { h, .. } = op {
            correct[h] = true;
        }
    }
    correct
}

/// Token normalization applied to both sides before alignment.
#[derive(Debug, Clone)]
pub struct Normalizer {
    pub case_fold: bool,
    /// Tokens removed before scoring, compared after case folding.
    pub ignore: BTreeSet<String>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { case_fold: true, ignore: BTreeSet::new() }
    }
}

impl Normalizer {
    pub fn with_ignored<I: IntoIterator<Item = S>, S: AsRef<str>>(mut self, tokens: I) -> Self {
        for t in tokens {
            let t = self.fold(t.as_ref());
            self.ignore.insert(t);
        }
        self
    }

    fn fold(&self, t: &str) -> String {
        if self.case_fold {
            t.to_lowercase()
        } else {
            t.to_string()
        }
    }

    pub fn normalize<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        tokens
            .iter()
            .map(|t| self.fold(t.as_ref()))
            .filter(|t| !self.ignore.contains(t))
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct References {
    by_id: BTreeMap<UtteranceId, Vec<String>>,
}

impl References {
    pub fn insert(&mut self, id: UtteranceId, words: Vec<String>) {
        self.by_id.entry(id).or_default().extend(words);
    }

    /// Exact match first, then a channel-less plain-transcript entry.
    pub fn get(&self, id: &UtteranceId) -> Option<&[String]> {
        self.by_id
            .get(id)
            .or_else(|| self.by_id.get(&UtteranceId::any_channel(&id.recording)))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UtteranceId, &Vec<String>)> {
        self.by_id.iter()
    }
}

const STM_IGNORE: &str = "ignore_time_segment_in_scoring";

/// STM lines: `file channel speaker start end [<labels>] words...`.
/// Segments of one file/channel are concatenated in start-time order.
pub fn parse_stm(text: &str, path: &Path) -> Result<References> {
    let mut segments: BTreeMap<UtteranceId, Vec<(f64, Vec<String>)>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with(";;") || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| Error::MalformedReferenceLine {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(bad("expected file channel speaker start end"));
        }
        let start: f64 = fields[3].parse().map_err(|_| bad("start time is not a number"))?;
        let end: f64 = fields[4].parse().map_err(|_| bad("end time is not a number"))?;
        if !(start.is_finite() && end.is_finite() && end >= start) {
            return Err(bad("invalid segment times"));
        }
        let mut rest = &fields[5..];
        if rest.first().is_some_and(|f| f.starts_with('<')) {
            rest = &rest[1..];
        }
        if rest.len() == 1 && rest[0].eq_ignore_ascii_case(STM_IGNORE) {
            continue;
        }
        let id = UtteranceId::new(fields[0], fields[1]);
        segments.entry(id).or_default().push((start, rest.iter().map(|s| s.to_string()).collect()));
    }
    let mut refs = References::default();
    for (id, mut segs) in segments {
        segs.sort_by(|a, b| a.0.total_cmp(&b.0));
        refs.insert(id, segs.into_iter().flat_map(|s| s.1).collect());
    }
    Ok(refs)
}

/// Plain transcripts: `utterance-id words...`, matched against any channel.
pub fn parse_plain_transcripts(text: &str, path: &Path) -> Result<References> {
    let mut refs = References::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let Some(id) = it.next() else {
            return Err(Error::MalformedReferenceLine {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: "missing utterance id".into(),
            });
        };
        refs.insert(UtteranceId::any_channel(id), it.map(str::to_string).collect());
    }
    Ok(refs)
}

/// Picks the STM reader for `.stm` files and the plain reader otherwise.
pub fn read_references(path: &Path) -> Result<References> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("stm")) {
        parse_stm(&text, path)
    } else {
        parse_plain_transcripts(&text, path)
    }
}

#[derive(Debug, Clone, Default)]
pub struct WerReport {
    pub per_utterance: Vec<(UtteranceId, ErrorCounts)>,
    pub total: ErrorCounts,
}

impl WerReport {
    pub fn push(&mut self, id: UtteranceId, counts: ErrorCounts) {
        self.total += counts;
        self.per_utterance.push((id, counts));
    }

    pub fn wer_percent(&self) -> Result<f64> {
        self.total.wer_percent()
    }
}

/// Aggregate per-utterance counts into a report.
pub fn wer_report<I: IntoIterator<Item = (UtteranceId, ErrorCounts)>>(counts: I) -> Result<WerReport> {
    let mut report = WerReport::default();
    for (id, c) in counts {
        report.push(id, c);
    }
    report.wer_percent()?;
    Ok(report)
}

fn fmt_wer(c: &ErrorCounts) -> String {
    match c.wer_percent() {
        Ok(w) => format!("{w:.2}"),
        Err(_) => "n/a".to_string(),
    }
}

pub fn format_wer_report(report: &WerReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<32} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8}", "utterance", "ref", "corr", "sub", "del", "ins", "wer%");
    let row = |out: &mut String, name: &str, c: &ErrorCounts| {
        let _ = writeln!(
            out,
            "{:<32} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8}",
            name,
            c.ref_words,
            c.correct,
            c.substitutions,
            c.deletions,
            c.insertions,
            fmt_wer(c)
        );
    };
    for (id, c) in &report.per_utterance {
        row(&mut out, &id.to_string(), c);
    }
    row(&mut out, "TOTAL", &report.total);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    /// Exhaustive minimum over every monotone alignment path.
    fn brute_cost(r: &[u8], h: &[u8]) -> u32 {
        match (r.split_first(), h.split_first()) {
            (None, None) => 0,
            (Some(_), None) => r.len() as u32 * COST_DELETION,
            (None, Some(_)) => h.len() as u32 * COST_INSERTION,
            (Some((a, rr)), Some((b, hh))) => {
                let diag = brute_cost(rr, hh) + if a == b { 0 } else { COST_SUBSTITUTION };
                let del = brute_cost(rr, h) + COST_DELETION;
                let ins = brute_cost(r, hh) + COST_INSERTION;
                diag.min(del).min(ins)
            }
        }
    }

    #[test]
    fn identical_sequences() {
        let c = align_and_count(&w("a b c"), &w("a b c"));
        assert_eq!(c.errors(), 0);
        assert_eq!(c.wer_percent().unwrap(), 0.0);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let c = align_and_count(&w("a b c d"), &Vec::<&str>::new());
        assert_eq!(c.deletions, 4);
        assert_eq!(c.ref_words, 4);
        assert!(matches!(align_and_count(&Vec::<&str>::new(), &w("x")).wer_percent(), Err(Error::EmptyReference)));
    }

    #[test]
    fn sub_plus_insertion() {
        let ops = align(&w("a b c"), &w("a x c d"));
        assert_eq!(
            ops,
            vec![
                AlignOp::Correct { r: 0, h: 0 },
                AlignOp::Substitution { r: 1, h: 1 },
                AlignOp::Correct { r: 2, h: 2 },
                AlignOp::Insertion { h: 3 },
            ]
        );
        let c = ErrorCounts::from_ops(&ops);
        assert_eq!((c.substitutions, c.insertions, c.deletions), (1, 1, 0));
        assert!((c.wer_percent().unwrap() - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn wer_over_hundred_percent() {
        let c = ErrorCounts { substitutions: 1, insertions: 2, ref_words: 1, ..Default::default() };
        assert_eq!(c.wer_percent().unwrap(), 300.0);
    }

    #[test]
    fn tie_prefers_substitution_over_ins_del_pair() {
        // sub (4) < ins+del (6), so a one-word swap is always a substitution
        let c = align_and_count(&w("a"), &w("b"));
        assert_eq!(c.substitutions, 1);
        // two cost-6 paths; the backtrace takes the insertion at the end
        let ops = align(&w("a b"), &w("b a"));
        assert_eq!(
            ops,
            vec![AlignOp::Deletion { r: 0 }, AlignOp::Correct { r: 1, h: 0 }, AlignOp::Insertion { h: 1 }]
        );
    }

    #[test]
    fn stm_and_plain_references() {
        let stm = ";; comment\nrecA 1 spk 2.0 3.0 <o,f0,male> World\nrecA 1 spk 0.0 1.0 Hello\nrecA 1 spk 4 5 ignore_time_segment_in_scoring\n";
        let refs = parse_stm(stm, Path::new("x.stm")).unwrap();
        assert_eq!(refs.get(&UtteranceId::new("recA", "1")).unwrap(), ["Hello", "World"]);
        assert!(refs.get(&UtteranceId::new("recA", "2")).is_none());
        assert!(matches!(
            parse_stm("recA 1 spk zero 1 a", Path::new("x.stm")),
            Err(Error::MalformedReferenceLine { line: 1, .. })
        ));

        let plain = parse_plain_transcripts("u1 a b\n\nu2 c\n", Path::new("p.txt")).unwrap();
        assert_eq!(plain.get(&UtteranceId::new("u1", "A")).unwrap(), ["a", "b"]);
        assert_eq!(plain.len(), 2);
    }

    #[test]
    fn normalizer_folds_and_filters() {
        let n = Normalizer::default().with_ignored(["UH", "%hesitation"]);
        assert_eq!(n.normalize(&w("Hello uh WORLD %HESITATION")), vec!["hello", "world"]);
        let keep = Normalizer { case_fold: false, ..Default::default() };
        assert_eq!(keep.normalize(&w("A a")), vec!["A", "a"]);
    }

    #[test]
    fn report_totals() {
        let r = wer_report([
            (UtteranceId::new("a", "1"), align_and_count(&w("a b"), &w("a b"))),
            (UtteranceId::new("b", "1"), align_and_count(&w("a b"), &w("a"))),
        ])
        .unwrap();
        assert_eq!(r.total.ref_words, 4);
        assert_eq!(r.wer_percent().unwrap(), 25.0);
        let text = format_wer_report(&r);
        assert!(text.contains("TOTAL"));
        assert!(text.lines().last().unwrap().ends_with("25.00"));
        assert!(matches!(wer_report(Vec::new()), Err(Error::EmptyReference)));
    }

    #[test]
    fn dp_matches_exhaustive_small() {
        let mut seqs: Vec<Vec<u8>> = vec![vec![]];
        for len in 1..=4 {
            let mut v = vec![0u8; len];
            loop {
                seqs.push(v.clone());
                let mut k = 0;
                while k < len && v[k] == 2 {
                    v[k] = 0;
                    k += 1;
                }
                if k == len {
                    break;
                }
                v[k] += 1;
            }
        }
        for r in &seqs {
            for h in &seqs {
                let rs: Vec<String> = r.iter().map(|c| c.to_string()).collect();
                let hs: Vec<String> = h.iter().map(|c| c.to_string()).collect();
                let cost: u32 = align(&rs, &hs).iter().map(AlignOp::cost).sum();
                assert_eq!(cost, brute_cost(r, h), "{r:?} {h:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn self_alignment_is_free(x in proptest::collection::vec(0u8..5, 0..20)) {
            let s: Vec<String> = x.iter().map(|c| c.to_string()).collect();
            let c = align_and_count(&s, &s);
            prop_assert_eq!(c.errors(), 0);
            prop_assert_eq!(c.correct, s.len());
        }

        #[test]
        fn counts_are_consistent(
            r in proptest::collection::vec(0u8..3, 0..7),
            h in proptest::collection::vec(0u8..3, 0..7),
        ) {
            let rs: Vec<String> = r.iter().map(|c| c.to_string()).collect();
            let hs: Vec<String> = h.iter().map(|c| c.to_string()).collect();
            let ops = align(&rs, &hs);
            let c = ErrorCounts::from_ops(&ops);
            prop_assert_eq!(c.correct + c.substitutions + c.deletions, r.len());
            prop_assert_eq!(c.correct + c.substitutions + c.insertions, h.len());
            let diff = r.len().abs_diff(h.len());
            prop_assert!(c.errors() <= r.len().max(h.len()) + diff);
            let cost: u32 = ops.iter().map(AlignOp::cost).sum();
            prop_assert_eq!(cost, brute_cost(&r, &h));
        }
    }
}
