//! Hypothesis combination: CTM I/O, word transition network alignment,
//! voting, confidence calibration and NCE.

pub mod calibration;
pub mod wtn;

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub use calibration::{
    apply_calibration, compute_nce, train_calibration, CalibrationExample, CalibrationModel,
};
pub use wtn::{build_wtn, vote, Slot, VoteConfig, WordTransitionNetwork, WtnEntry};

/// CTM utterance key. Plain transcripts use the `*` channel, which
/// matches any CTM channel of the same recording.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UtteranceId {
    pub recording: String,
    pub channel: String,
}

impl UtteranceId {
    pub const ANY_CHANNEL: &'static str = "*";

    pub fn new(recording: impl Into<String>, channel: impl Into<String>) -> Self {
        Self { recording: recording.into(), channel: channel.into() }
    }

    pub fn any_channel(recording: &str) -> Self {
        Self::new(recording, Self::ANY_CHANNEL)
    }
}

impl fmt::Display for UtteranceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.channel == Self::ANY_CHANNEL {
            write!(f, "{}", self.recording)
        } else {
            write!(f, "{}:{}", self.recording, self.channel)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisWord {
    pub word: String,
    pub start_s: f64,
    pub dur_s: f64,
    pub confidence: f64,
    pub lm_score: Option<f64>,
}

impl HypothesisWord {
    pub fn new(word: impl Into<String>, start_s: f64, dur_s: f64, confidence: f64) -> Self {
        Self { word: word.into(), start_s, dur_s, confidence, lm_score: None }
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.dur_s
    }
}

pub type CtmMap = BTreeMap<UtteranceId, Vec<HypothesisWord>>;

pub fn parse_ctm(path: &Path) -> Result<CtmMap> {
    let text = std::fs::read_to_string(path)?;
    parse_ctm_str(&text, path)
}

/// `recording channel start dur word [confidence [lm_score]]`; `;;` and `#`
/// lines are comments. Words are sorted by start time per utterance.
pub fn parse_ctm_str(text: &str, path: &Path) -> Result<CtmMap> {
    let mut out = CtmMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with(";;") || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| Error::MalformedCtmLine {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: reason.to_string(),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if !(5..=7).contains(&f.len()) {
            return Err(bad(&format!("expected 5 to 7 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(&format!("{what} is not a finite number")))
        };
        let start_s = num(f[2], "start")?;
        let dur_s = num(f[3], "duration")?;
        if dur_s < 0.0 {
            return Err(bad("negative duration"));
        }
        let confidence = match f.get(5) {
            Some(c) => num(c, "confidence")?,
            None => 1.0,
        };
        if !(0.0..=1.0).contains(&confidence) {
            return Err(bad("confidence outside [0,1]"));
        }
        let lm_score = f.get(6).map(|s| num(s, "lm score")).transpose()?;
        out.entry(UtteranceId::new(f[0], f[1])).or_default().push(HypothesisWord {
            word: f[4].to_string(),
            start_s,
            dur_s,
            confidence,
            lm_score,
        });
    }
    for words in out.values_mut() {
        words.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    }
    Ok(out)
}

/// Six-column CTM.
pub fn format_ctm(ctm: &CtmMap) -> String {
    let mut out = String::new();
    for (id, words) in ctm {
        for w in words {
            let _ = writeln!(
                out,
                "{} {} {:.3} {:.3} {} {:.6}",
                id.recording, id.channel, w.start_s, w.dur_s, w.word, w.confidence
            );
        }
    }
    out
}

/// Fill words lacking a per-word LM score with an utterance-level score.
pub fn broadcast_lm_score(words: &mut [HypothesisWord], utterance_score: f64) {
    for w in words.iter_mut().filter(|w| w.lm_score.is_none()) {
        w.lm_score = Some(utterance_score);
    }
}

/// Utterance-level LM scores: lines `recording [channel] score`.
pub fn parse_utterance_scores(text: &str, path: &Path) -> Result<BTreeMap<UtteranceId, f64>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::MalformedCtmLine {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: "expected `recording [channel] score`".into(),
        };
        let (id, score) = match f.as_slice() {
            [rec, score] => (UtteranceId::any_channel(rec), score),
            [rec, chan, score] => (UtteranceId::new(*rec, *chan), score),
            _ => return Err(bad()),
        };
        let v: f64 = score.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(bad)?;
        out.insert(id, v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_basic_line() {
        let m = parse_ctm_str("rec1 1 0.00 0.40 hello 0.9\n", Path::new("a.ctm")).unwrap();
        let w = &m[&UtteranceId::new("rec1", "1")][0];
        assert_eq!(w.word, "hello");
        assert_eq!(w.confidence, 0.9);
        assert_eq!(w.lm_score, None);
    }

    #[test]
    fn missing_confidence_defaults_to_one() {
        let m = parse_ctm_str("r A 1.0 0.2 x\n", Path::new("a.ctm")).unwrap();
        assert_eq!(m[&UtteranceId::new("r", "A")][0].confidence, 1.0);
    }

    #[test]
    fn sorts_by_start_and_reads_lm() {
        let text = ";; header\nr 1 2.0 0.1 b 0.5 -3.5\nr 1 0.5 0.1 a 0.6 -1.25\nq 1 0 0 z\n";
        let m = parse_ctm_str(text, Path::new("a.ctm")).unwrap();
        let r = &m[&UtteranceId::new("r", "1")];
        assert_eq!(r.iter().map(|w| w.word.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(r[0].lm_score, Some(-1.25));
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        for (text, line) in [
            ("r 1 0 0.1 a\nr 1 x 0.1 b\n", 2),
            ("r 1 0 -0.1 a\n", 1),
            ("\nr 1 0 0.1 a 1.5\n", 2),
            ("r 1 0\n", 1),
            ("r 1 0 0.1 a 0.5 1 extra\n", 1),
        ] {
            match parse_ctm_str(text, Path::new("a.ctm")) {
                Err(Error::MalformedCtmLine { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn format_roundtrip() {
        let text = "r 1 0.000 0.400 a 0.900000\nr 1 0.500 0.100 b 0.250000\n";
        let m = parse_ctm_str(text, Path::new("a.ctm")).unwrap();
        assert_eq!(format_ctm(&m), text);
    }

    #[test]
    fn utterance_scores_broadcast() {
        let s = parse_utterance_scores("r -10\nq 2 -4.5\n", Path::new("s")).unwrap();
        assert_eq!(s[&UtteranceId::any_channel("r")], -10.0);
        assert_eq!(s[&UtteranceId::new("q", "2")], -4.5);
        let mut words = vec![HypothesisWord::new("a", 0.0, 0.1, 0.5), HypothesisWord::new("b", 0.1, 0.1, 0.5)];
        words[1].lm_score = Some(-1.0);
        broadcast_lm_score(&mut words, -10.0);
        assert_eq!(words[0].lm_score, Some(-10.0));
        assert_eq!(words[1].lm_score, Some(-1.0));
    }
}
