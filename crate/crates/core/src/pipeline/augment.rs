//! Chunk/recording augmentation: parameters are drawn into records first,
//! then rendered from the records, so a run and its replay share one code path.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;

use super::config::{PipelineConfig, StageLevel};
use super::record::{format_records, AugmentationRecord, NoiseChoice};
use super::seed::{derive_seed, substream};
use crate::audio::{read_wav, resample, write_wav, AudioBuffer};
use crate::channel::walkie_talkie_with_cutoff;
use crate::codec::{apply_codec, CodecSpec};
use crate::error::{Error, Result};
use crate::manifest::{read_manifest, resolve};
use crate::noise::{build_noise_pool, draw_noise_event, mix_at_snr, BandMix, NoiseEvent, NoisePool};
use crate::reverb::{apply_reverb, build_ir_pool, format_pool_report, IrPool};
use crate::vad::{detect_speech, group_chunks, import_segments, SpeechSegment};

pub const RECORDS_FILE: &str = "augmentation.tsv";
pub const IR_REPORT_FILE: &str = "ir_pool.txt";

/// Pools and samplers shared read-only by all workers.
pub struct Resources {
    pub ir_pool: Option<IrPool>,
    pub noise_pool: Option<NoisePool>,
    bands: Option<BandMix>,
    codec_sampler: Option<WeightedIndex<f64>>,
}

impl Resources {
    /// Load the pools named in the config for every enabled stage.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let ir_pool = match (&cfg.ir_manifest, cfg.reverb.enabled) {
            (Some(m), true) => {
                let (pool, report) = build_ir_pool(m, cfg.reverb.max_rt60_s, cfg.sample_rate_hz)?;
                std::fs::create_dir_all(&cfg.output_dir)?;
                std::fs::write(cfg.output_dir.join(IR_REPORT_FILE), format_pool_report(&report))?;
                Some(pool)
            }
            _ => None,
        };
        let noise_pool = match (&cfg.noise_manifest, cfg.noise.enabled) {
            (Some(m), true) => Some(build_noise_pool(m, &cfg.noise.class_weights, cfg.sample_rate_hz)?),
            _ => None,
        };
        Self::from_pools(cfg, ir_pool, noise_pool)
    }

    pub fn from_pools(cfg: &PipelineConfig, ir_pool: Option<IrPool>, noise_pool: Option<NoisePool>) -> Result<Self> {
        if cfg.reverb.enabled && ir_pool.as_ref().map_or(true, IrPool::is_empty) {
            return Err(Error::EmptyPool("reverb enabled without impulse responses".into()));
        }
        if cfg.noise.enabled && noise_pool.is_none() {
            return Err(Error::EmptyPool("noise enabled without a noise pool".into()));
        }
        let bands = if cfg.noise.enabled {
            Some(BandMix::new(cfg.noise.bands.iter().map(|b| (b.band(), b.weight)).collect())?)
        } else {
            None
        };
        let codec_sampler = if cfg.codec.enabled {
            Some(
                WeightedIndex::new(cfg.codec.specs.iter().map(|s| s.weight))
                    .map_err(|e| Error::Config(format!("codec weights: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { ir_pool, noise_pool, bands, codec_sampler })
    }
}

/// Partition `[0, len)` at the first speech sample of every chunk after the
/// first, so leading and trailing non-speech stays with its neighbour.
pub fn chunk_regions(chunk_starts_s: &[f64], sample_rate_hz: u32, len: usize) -> Vec<(usize, usize)> {
    let mut starts = vec![0usize];
    for &s in chunk_starts_s.iter().skip(1) {
        let i = ((s * sample_rate_hz as f64).round() as usize).min(len);
        if i > *starts.last().expect("nonempty") && i < len {
            starts.push(i);
        }
    }
    let mut regions: Vec<(usize, usize)> = starts.windows(2).map(|w| (w[0], w[1])).collect();
    regions.push((*starts.last().expect("nonempty"), len));
    regions
}

/// Speech segments for a recording: imported ones when given, else the energy detector.
pub fn recording_regions(cfg: &PipelineConfig, audio: &AudioBuffer, imported: Option<&[SpeechSegment]>) -> Result<Vec<(usize, usize)>> {
    let segments = match imported {
        Some(s) => s.to_vec(),
        None => detect_speech(audio, &cfg.vad)?,
    };
    let chunks = group_chunks(&segments, cfg.vad.min_chunk_s);
    let starts: Vec<f64> = chunks.iter().map(|c| c.segments[0].start_s).collect();
    Ok(chunk_regions(&starts, audio.sample_rate_hz(), audio.len()))
}

fn unit_index(level: StageLevel, chunk: usize) -> u64 {
    match level {
        StageLevel::Chunk => chunk as u64,
        StageLevel::Recording => 0,
    }
}

/// Draw every stage's parameters into one record per region.
pub fn plan_recording(
    cfg: &PipelineConfig,
    res: &Resources,
    recording_id: &str,
    audio: &AudioBuffer,
    regions: &[(usize, usize)],
) -> Vec<AugmentationRecord> {
    let seed = derive_seed(cfg.master_seed, recording_id);
    let n = regions.len();
    let silent_input: Vec<bool> = regions.iter().map(|&(s, e)| audio.samples()[s..e].iter().all(|&v| v == 0.0)).collect();
    let whole_silent = silent_input.iter().all(|&s| s);
    let mut recs: Vec<AugmentationRecord> = regions
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| AugmentationRecord {
            recording_id: recording_id.to_string(),
            chunk_index: i,
            start_sample: s,
            end_sample: e,
            ir_id: None,
            noise: None,
            channel_cutoff_hz: None,
            codec: None,
            drop_rate: 0.0,
            derived_seed: seed,
        })
        .collect();

    // one draw per unit; recording-level stages copy unit 0 to every chunk
    let units = |level: StageLevel| -> Vec<usize> {
        match level {
            StageLevel::Chunk => (0..n).collect(),
            StageLevel::Recording => vec![0],
        }
    };
    let targets = |level: StageLevel, u: usize| -> Vec<usize> {
        match level {
            StageLevel::Chunk => vec![u],
            StageLevel::Recording => (0..n).collect(),
        }
    };

    if let (true, Some(pool)) = (cfg.reverb.enabled, &res.ir_pool) {
        let level = cfg.reverb.level;
        for u in units(level) {
            let mut rng = substream(seed, "reverb", unit_index(level, u));
            if rng.gen::<f64>() < cfg.reverb.probability {
                let id = pool.entries()[rng.gen_range(0..pool.len())].source_id.clone();
                for t in targets(level, u) {
                    recs[t].ir_id = Some(id.clone());
                }
            }
        }
    }

    let mut silent_after_noise = silent_input.clone();
    if let (true, Some(pool), Some(bands)) = (cfg.noise.enabled, &res.noise_pool, &res.bands) {
        let level = cfg.noise.level;
        for u in units(level) {
            let mut rng = substream(seed, "noise", unit_index(level, u));
            let silent = match level {
                StageLevel::Chunk => silent_input[u],
                StageLevel::Recording => whole_silent,
            };
            if rng.gen::<f64>() < cfg.noise.probability && !silent {
                let band = bands.choose(&mut rng);
                let ev = draw_noise_event(pool, band, &mut rng);
                let choice = NoiseChoice { clip_id: ev.clip_id, offset_s: ev.start_offset_s, snr_db: ev.snr_db, band: band.name.clone() };
                for t in targets(level, u) {
                    recs[t].noise = Some(choice.clone());
                    silent_after_noise[t] = false;
                }
            }
        }
    }

    if cfg.channel.enabled {
        let level = cfg.channel.level;
        for u in units(level) {
            let mut rng = substream(seed, "channel", unit_index(level, u));
            let silent = match level {
                StageLevel::Chunk => silent_after_noise[u],
                StageLevel::Recording => silent_after_noise.iter().all(|&s| s),
            };
            let apply = cfg.channel.params.should_apply(&mut rng);
            let cutoff = cfg.channel.params.choose_cutoff(&mut rng);
            if apply && !silent {
                for t in targets(level, u) {
                    recs[t].channel_cutoff_hz = Some(cutoff);
                }
            }
        }
    }

    if let (true, Some(sampler)) = (cfg.codec.enabled, &res.codec_sampler) {
        let level = cfg.codec.level;
        for u in units(level) {
            let mut rng = substream(seed, "codec", unit_index(level, u));
            if rng.gen::<f64>() < cfg.codec.probability {
                let spec = &cfg.codec.specs[sampler.sample(&mut rng)];
                for t in targets(level, u) {
                    recs[t].codec = Some(spec.label().to_string());
                    recs[t].drop_rate = spec.drop_rate;
                }
            }
        }
    }
    recs
}

fn find_codec<'a>(cfg: &'a PipelineConfig, label: &str) -> Result<&'a CodecSpec> {
    cfg.codec
        .specs
        .iter()
        .find(|s| s.label() == label)
        .ok_or_else(|| Error::Config(format!("codec `{label}` is not configured")))
}

#[derive(Clone, Copy)]
enum Stage {
    Reverb,
    Noise,
    Channel,
    Codec,
}

fn apply_stage(stage: Stage, cfg: &PipelineConfig, res: &Resources, x: &AudioBuffer, r: &AugmentationRecord, unit: u64) -> Result<AudioBuffer> {
    match stage {
        Stage::Reverb => match &r.ir_id {
            Some(id) => {
                let pool = res.ir_pool.as_ref().ok_or_else(|| Error::EmptyPool("no impulse responses loaded".into()))?;
                let ir = pool.get(id).ok_or_else(|| Error::Config(format!("impulse response `{id}` not in pool")))?;
                apply_reverb(x, ir)
            }
            None => Ok(x.clone()),
        },
        Stage::Noise => match &r.noise {
            Some(n) => {
                let pool = res.noise_pool.as_ref().ok_or_else(|| Error::EmptyPool("no noise pool loaded".into()))?;
                let clip = pool.get(&n.clip_id).ok_or_else(|| Error::Config(format!("noise clip `{}` not in pool", n.clip_id)))?;
                let ev = NoiseEvent { clip_id: n.clip_id.clone(), start_offset_s: n.offset_s, snr_db: n.snr_db };
                Ok(mix_at_snr(x, &clip.audio, &ev)?.audio)
            }
            None => Ok(x.clone()),
        },
        Stage::Channel => match r.channel_cutoff_hz {
            Some(c) => Ok(walkie_talkie_with_cutoff(x, &cfg.channel.params, c)?.0),
            None => Ok(x.clone()),
        },
        Stage::Codec => match &r.codec {
            Some(label) => {
                let spec = find_codec(cfg, label)?;
                let mut rng = substream(r.derived_seed, "codec-drop", unit);
                apply_codec(x, spec, &mut rng)
            }
            None => Ok(x.clone()),
        },
    }
}

fn stages(cfg: &PipelineConfig) -> [(Stage, bool, StageLevel); 4] {
    [
        (Stage::Reverb, cfg.reverb.enabled, cfg.reverb.level),
        (Stage::Noise, cfg.noise.enabled, cfg.noise.level),
        (Stage::Channel, cfg.channel.enabled, cfg.channel.level),
        (Stage::Codec, cfg.codec.enabled, cfg.codec.level),
    ]
}

/// Apply the stages in order (reverb, noise, channel, codec) as the records dictate.
pub fn render(cfg: &PipelineConfig, res: &Resources, input: &AudioBuffer, records: &[AugmentationRecord]) -> Result<AudioBuffer> {
    let first = records.first().ok_or_else(|| Error::InvalidParameter("no records for recording".into()))?;
    let mut expect = 0;
    for r in records {
        if r.start_sample != expect || r.end_sample <= r.start_sample {
            return Err(Error::InvalidParameter(format!("records of {} do not partition the recording", r.recording_id)));
        }
        expect = r.end_sample;
    }
    if expect != input.len() {
        return Err(Error::InvalidParameter(format!(
            "records of {} cover {expect} samples, input has {}",
            first.recording_id,
            input.len()
        )));
    }
    let mut audio = input.clone();
    for (stage, enabled, level) in stages(cfg) {
        if !enabled {
            continue;
        }
        audio = match level {
            StageLevel::Recording => apply_stage(stage, cfg, res, &audio, first, 0)?,
            StageLevel::Chunk => {
                let mut out = Vec::with_capacity(audio.len());
                for r in records {
                    let piece = audio.slice(r.start_sample, r.end_sample);
                    out.extend(apply_stage(stage, cfg, res, &piece, r, r.chunk_index as u64)?.into_samples());
                }
                AudioBuffer::from_parts(out, audio.sample_rate_hz())
            }
        };
    }
    Ok(audio)
}

/// Chunk-level stages only, on one chunk's region of the input.
pub fn replay_chunk(cfg: &PipelineConfig, res: &Resources, input: &AudioBuffer, record: &AugmentationRecord) -> Result<AudioBuffer> {
    if record.end_sample > input.len() || record.start_sample >= record.end_sample {
        return Err(Error::InvalidParameter(format!("chunk range {}..{}", record.start_sample, record.end_sample)));
    }
    let mut x = input.slice(record.start_sample, record.end_sample);
    for (stage, enabled, level) in stages(cfg) {
        if enabled && level == StageLevel::Chunk {
            x = apply_stage(stage, cfg, res, &x, record, record.chunk_index as u64)?;
        }
    }
    Ok(x)
}

pub fn load_recording(cfg: &PipelineConfig, path: &Path) -> Result<AudioBuffer> {
    let audio = resample(&read_wav(path)?, cfg.sample_rate_hz)?;
    if audio.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    Ok(audio)
}

/// Plan and render one recording.
pub fn augment_recording(
    cfg: &PipelineConfig,
    res: &Resources,
    recording_id: &str,
    audio: &AudioBuffer,
    imported: Option<&[SpeechSegment]>,
) -> Result<(AudioBuffer, Vec<AugmentationRecord>)> {
    let regions = recording_regions(cfg, audio, imported)?;
    let records = plan_recording(cfg, res, recording_id, audio, &regions);
    let out = render(cfg, res, audio, &records)?;
    Ok((out, records))
}

#[derive(Debug, Default)]
pub struct AugmentSummary {
    pub records: Vec<AugmentationRecord>,
    pub outputs: Vec<PathBuf>,
    /// Recording id and error text for every skipped recording.
    pub failed: Vec<(String, String)>,
}

impl AugmentSummary {
    pub fn success(&self) -> bool {
        self.failed.is_empty()
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\'])
}

/// Corpus entries as (recording id, wav path) in manifest order.
pub fn read_corpus(manifest: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for l in read_manifest(manifest, 2)? {
        let id = l.fields[0].clone();
        if !valid_id(&id) {
            return Err(Error::MalformedManifest { path: manifest.into(), line: l.line, reason: format!("bad recording id `{id}`") });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::MalformedManifest { path: manifest.into(), line: l.line, reason: format!("duplicate recording id `{id}`") });
        }
        out.push((id, resolve(manifest, &l.fields[1])));
    }
    Ok(out)
}

/// Full batch: every recording is augmented independently on `cfg.workers`
/// threads; outputs go to `<output_dir>/<id>.wav` and the records to
/// [`RECORDS_FILE`]. Failed recordings are logged and listed in the summary.
pub fn run_augment(cfg: &PipelineConfig) -> Result<AugmentSummary> {
    cfg.validate()?;
    let corpus = read_corpus(&cfg.corpus_manifest)?;
    let imported: BTreeMap<String, Vec<SpeechSegment>> = match &cfg.segments {
        Some(p) => import_segments(p)?,
        None => BTreeMap::new(),
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    let res = Resources::load(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let results: Vec<Result<(PathBuf, Vec<AugmentationRecord>)>> = pool.install(|| {
        corpus
            .par_iter()
            .map(|(id, path)| {
                let audio = load_recording(cfg, path)?;
                let (out, records) = augment_recording(cfg, &res, id, &audio, imported.get(id).map(Vec::as_slice))?;
                let out_path = cfg.output_dir.join(format!("{id}.wav"));
                write_wav(&out, &out_path)?;
                Ok((out_path, records))
            })
            .collect()
    });

    let mut summary = AugmentSummary::default();
    for ((id, _), r) in corpus.iter().zip(results) {
        match r {
            Ok((path, records)) => {
                summary.outputs.push(path);
                summary.records.extend(records);
            }
            Err(e) => {
                log::error!("recording {id} skipped: {e}");
                summary.failed.push((id.clone(), e.to_string()));
            }
        }
    }
    std::fs::write(cfg.output_dir.join(RECORDS_FILE), format_records(&summary.records))?;
    log::info!(
        "augmented {} recordings ({} chunks), {} failed",
        summary.outputs.len(),
        summary.records.len(),
        summary.failed.len()
    );
    Ok(summary)
}

/// Re-render every recording named in `records` from its corpus input.
pub fn replay_records(cfg: &PipelineConfig, res: &Resources, records: &[AugmentationRecord]) -> Result<Vec<(String, AudioBuffer)>> {
    let corpus: BTreeMap<String, PathBuf> = read_corpus(&cfg.corpus_manifest)?.into_iter().collect();
    let mut grouped: Vec<(String, Vec<AugmentationRecord>)> = Vec::new();
    for r in records {
        match grouped.last_mut() {
            Some((id, v)) if *id == r.recording_id => v.push(r.clone()),
            _ => grouped.push((r.recording_id.clone(), vec![r.clone()])),
        }
    }
    grouped
        .into_iter()
        .map(|(id, recs)| {
            let path = corpus.get(&id).ok_or_else(|| Error::Config(format!("recording `{id}` not in corpus")))?;
            let audio = load_recording(cfg, path)?;
            Ok((id, render(cfg, res, &audio, &recs)?))
        })
        .collect()
}
