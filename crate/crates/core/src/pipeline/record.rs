use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Noise draw for one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseChoice {
    pub clip_id: String,
    pub offset_s: f64,
    pub snr_db: f64,
    pub band: String,
}

/// Every randomized choice made for one chunk. Together with the config,
/// pools and input audio it determines the output exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationRecord {
    pub recording_id: String,
    pub chunk_index: usize,
    /// Sample range of the chunk in the recording, end exclusive.
    pub start_sample: usize,
    pub end_sample: usize,
    pub ir_id: Option<String>,
    pub noise: Option<NoiseChoice>,
    /// High-pass cutoff when the channel was applied.
    pub channel_cutoff_hz: Option<f64>,
    /// Codec label from the config.
    pub codec: Option<String>,
    pub drop_rate: f64,
    pub derived_seed: u64,
}

impl AugmentationRecord {
    pub fn channel_applied(&self) -> bool {
        self.channel_cutoff_hz.is_some()
    }
}

pub const RECORD_HEADER: &str = "recording_id\tchunk_index\tstart_sample\tend_sample\tir_id\tnoise_id\tnoise_offset_s\tsnr_db\tsnr_band\tchannel_applied\tcutoff_hz\tcodec_kind\tdrop_rate\tderived_seed";
const NONE: &str = "-";

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| NONE.to_string(), T::to_string)
}

/// Tab-separated records with a header line. Floats use shortest
/// round-trip formatting so replay sees identical values.
pub fn format_records(records: &[AugmentationRecord]) -> String {
    let mut out = String::new();
    out.push_str(RECORD_HEADER);
    out.push('\n');
    for r in records {
        let n = r.noise.as_ref();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.recording_id,
            r.chunk_index,
            r.start_sample,
            r.end_sample,
            opt(&r.ir_id),
            opt(&n.map(|n| n.clip_id.clone())),
            opt(&n.map(|n| n.offset_s)),
            opt(&n.map(|n| n.snr_db)),
            opt(&n.map(|n| n.band.clone())),
            u8::from(r.channel_applied()),
            opt(&r.channel_cutoff_hz),
            opt(&r.codec),
            r.drop_rate,
            r.derived_seed
        );
    }
    out
}

pub fn parse_records(text: &str, path: &Path) -> Result<Vec<AugmentationRecord>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || line == RECORD_HEADER || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::MalformedManifest { path: path.to_path_buf(), line: idx + 1, reason };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 14 {
            return Err(bad(format!("expected 14 tab-separated fields, found {}", f.len())));
        }
        fn num<T: FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {what} `{s}`"))
        }
        fn maybe<T: FromStr>(s: &str, what: &str) -> std::result::Result<Option<T>, String> {
            if s == NONE {
                Ok(None)
            } else {
                num(s, what).map(Some)
            }
        }
        let rec = (|| -> std::result::Result<AugmentationRecord, String> {
            let noise_id: Option<String> = maybe(f[5], "noise_id")?;
            let noise = match noise_id {
                Some(clip_id) => Some(NoiseChoice {
                    clip_id,
                    offset_s: num(f[6], "noise_offset_s")?,
                    snr_db: num(f[7], "snr_db")?,
                    band: f[8].to_string(),
                }),
                None => None,
            };
            let channel_cutoff_hz: Option<f64> = maybe(f[10], "cutoff_hz")?;
            let applied: u8 = num(f[9], "channel_applied")?;
            if (applied == 1) != channel_cutoff_hz.is_some() {
                return Err("channel_applied disagrees with cutoff_hz".into());
            }
            Ok(AugmentationRecord {
                recording_id: f[0].to_string(),
                chunk_index: num(f[1], "chunk_index")?,
                start_sample: num(f[2], "start_sample")?,
                end_sample: num(f[3], "end_sample")?,
                ir_id: maybe(f[4], "ir_id")?,
                noise,
                channel_cutoff_hz,
                codec: maybe(f[11], "codec_kind")?,
                drop_rate: num(f[12], "drop_rate")?,
                derived_seed: num(f[13], "derived_seed")?,
            })
        })()
        .map_err(bad)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<AugmentationRecord>> {
    parse_records(&std::fs::read_to_string(path)?, path)
}
