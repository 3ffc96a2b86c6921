//! Energy-based speech detection and grouping of speech segments into
//! chunks of at least `min_chunk_s` seconds of speech.
//!
//! Segment lists from an external detector can be imported with
//! [`import_segments`] and fed to [`group_chunks`] directly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeechSegment {
    pub start_s: f64,
    pub end_s: f64,
}

impl SpeechSegment {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || start_s >= end_s {
            return Err(Error::InvalidParameter(format!("segment ({start_s}, {end_s})")));
        }
        Ok(Self { start_s, end_s })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentChunk {
    pub segments: Vec<SpeechSegment>,
    pub total_speech_s: f64,
}

impl SegmentChunk {
    fn push(&mut self, seg: SpeechSegment) {
        self.total_speech_s += seg.duration_s();
        self.segments.push(seg);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Detection threshold above the estimated noise floor.
    pub energy_margin_db: f64,
    pub hangover_frames: usize,
    pub min_chunk_s: f64,
    /// Frames quieter than this absolute level are never speech.
    pub silence_floor_dbfs: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            energy_margin_db: 6.0,
            hangover_frames: 5,
            min_chunk_s: 5.0,
            silence_floor_dbfs: -80.0,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0 && self.frame_ms >= self.hop_ms) {
            return Err(Error::InvalidParameter(format!(
                "need frame_ms >= hop_ms > 0, got frame {} hop {}",
                self.frame_ms, self.hop_ms
            )));
        }
        if !(self.min_chunk_s > 0.0) {
            return Err(Error::InvalidParameter("min_chunk_s must be positive".into()));
        }
        Ok(())
    }
}

const NOISE_FLOOR_PERCENTILE: f64 = 0.30;

/// Frame log-energies in dBFS (mean-square, floored at -200 dB).
pub fn frame_energies_db(buffer: &AudioBuffer, frame: usize, hop: usize) -> Vec<f64> {
    let x = buffer.samples();
    if frame == 0 || hop == 0 || x.len() < frame {
        return Vec::new();
    }
    let n_frames = 1 + (x.len() - frame) / hop;
    (0..n_frames)
        .map(|i| {
            let w = &x[i * hop..i * hop + frame];
            let p = w.iter().map(|s| s * s).sum::<f64>() / frame as f64;
            10.0 * p.max(1e-20).log10()
        })
        .collect()
}

/// Label speech regions by frame energy.
///
/// The noise floor is the 30th percentile of frame energies. A frame is
/// speech when it exceeds `floor + margin`; the threshold is capped at
/// `loudest - margin` so a stationary loud signal is detected as a whole,
/// and frames below `silence_floor_dbfs` never count.
pub fn detect_speech(buffer: &AudioBuffer, config: &VadConfig) -> Result<Vec<SpeechSegment>> {
    config.validate()?;
    let rate = buffer.sample_rate_hz() as f64;
    let frame = ((config.frame_ms * rate / 1000.0).round() as usize).max(1);
    let hop = ((config.hop_ms * rate / 1000.0).round() as usize).max(1);
    if buffer.len() < frame {
        return Err(Error::BufferTooShort { samples: buffer.len(), frame });
    }
    let energies = frame_energies_db(buffer, frame, hop);

    let mut sorted = energies.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * NOISE_FLOOR_PERCENTILE).round() as usize;
    let floor = sorted[idx];
    let loudest = sorted[sorted.len() - 1];
    let threshold = (floor + config.energy_margin_db).min(loudest - config.energy_margin_db);

    let is_speech: Vec<bool> = energies
        .iter()
        .map(|&e| e >= config.silence_floor_dbfs && e > threshold)
        .collect();

    let duration = buffer.duration_s();
    let mut segments: Vec<SpeechSegment> = Vec::new();
    let mut i = 0;
    while i < is_speech.len() {
        if !is_speech[i] {
            i += 1;
            continue;
        }
        let first = i;
        while i < is_speech.len() && is_speech[i] {
            i += 1;
        }
        let last = (i - 1 + config.hangover_frames).min(is_speech.len() - 1);
        let start = (first * hop) as f64 / rate;
        // the final frame also owns the leftover samples past its end
        let end = if last + 1 == is_speech.len() {
            duration
        } else {
            (((last * hop + frame) as f64) / rate).min(duration)
        };
        match segments.last_mut() {
            Some(prev) if start <= prev.end_s => prev.end_s = prev.end_s.max(end),
            _ => segments.push(SpeechSegment { start_s: start, end_s: end }),
        }
    }
    Ok(segments)
}

/// Parse a segment file of `recording-id start end` lines.
///
/// Blank lines and lines starting with `#` or `;;` are skipped. Segments are
/// sorted per recording; overlaps are rejected (touching is fine).
pub fn import_segments(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<SpeechSegment>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_segments(&text, path)
}

pub fn parse_segments(text: &str, path: &Path) -> Result<BTreeMap<String, Vec<SpeechSegment>>> {
    let mut map: BTreeMap<String, Vec<SpeechSegment>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(";;") {
            continue;
        }
        let bad = |reason: String| Error::MalformedSegmentLine { path: path.into(), line: n + 1, reason };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let (start, end) = (parse(fields[1])?, parse(fields[2])?);
        let seg = SpeechSegment::new(start, end).map_err(|_| bad(format!("invalid span {start} {end}")))?;
        map.entry(fields[0].to_string()).or_default().push(seg);
    }
    for (rec, segs) in map.iter_mut() {
        segs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        if let Some(w) = segs.windows(2).find(|w| w[1].start_s < w[0].end_s) {
            return Err(Error::OverlapError {
                recording: rec.clone(),
                a_start: w[0].start_s,
                a_end: w[0].end_s,
                b_start: w[1].start_s,
                b_end: w[1].end_s,
            });
        }
    }
    Ok(map)
}

/// Greedy in-order grouping of segments into chunks of at least
/// `min_chunk_s` seconds of speech. Gaps between segments do not count.
/// A short trailing remainder joins the previous chunk.
pub fn group_chunks(segments: &[SpeechSegment], min_chunk_s: f64) -> Vec<SegmentChunk> {
    let mut closed: Vec<SegmentChunk> = Vec::new();
    let mut open = SegmentChunk { segments: Vec::new(), total_speech_s: 0.0 };
    for &seg in segments {
        open.push(seg);
        if open.total_speech_s >= min_chunk_s {
            closed.push(std::mem::replace(&mut open, SegmentChunk { segments: Vec::new(), total_speech_s: 0.0 }));
        }
    }
    if !open.segments.is_empty() {
        match closed.last_mut() {
            Some(prev) => open.segments.into_iter().for_each(|s| prev.push(s)),
            None => closed.push(open),
        }
    }
    closed
}

/// Chunk manifest lines: `recording-id chunk-index start end [start end ...]`.
pub fn format_chunk_manifest(recording_id: &str, chunks: &[SegmentChunk]) -> String {
    let mut out = String::new();
    for (i, c) in chunks.iter().enumerate() {
        let _ = write!(out, "{recording_id} {i}");
        for s in &c.segments {
            let _ = write!(out, " {:.3} {:.3}", s.start_s, s.end_s);
        }
        out.push('\n');
    }
    out
}

pub fn format_segments(recording_id: &str, segments: &[SpeechSegment]) -> String {
    segments
        .iter()
        .map(|s| format!("{recording_id} {:.3} {:.3}\n", s.start_s, s.end_s))
        .collect()
}
