//! Weighted noise pools and additive mixing at a target SNR.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, resample, AudioBuffer};
use crate::error::{Error, Result};
use crate::manifest::{read_manifest, resolve};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseClip {
    pub audio: AudioBuffer,
    pub source_id: String,
    pub source_class: String,
    /// Replication factor of this clip in the sampling distribution.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrBand {
    pub name: String,
    pub low_db: f64,
    pub high_db: f64,
}

impl SnrBand {
    pub fn new(name: impl Into<String>, low_db: f64, high_db: f64) -> Result<Self> {
        let band = Self { name: name.into(), low_db, high_db };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low_db.is_finite() && self.high_db.is_finite() && self.low_db <= self.high_db) {
            return Err(Error::InvalidParameter(format!(
                "SNR band {:?}: need low <= high, got {} {}",
                self.name, self.low_db, self.high_db
            )));
        }
        Ok(())
    }

    pub fn low() -> Self {
        Self { name: "low".into(), low_db: 1.0, high_db: 8.0 }
    }

    pub fn mid() -> Self {
        Self { name: "mid".into(), low_db: 9.0, high_db: 15.0 }
    }

    pub fn contains(&self, snr_db: f64) -> bool {
        (self.low_db..=self.high_db).contains(&snr_db)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEvent {
    pub clip_id: String,
    pub start_offset_s: f64,
    pub snr_db: f64,
}

/// Immutable pool of noise clips sampled in proportion to clip weight.
#[derive(Debug, Clone)]
pub struct NoisePool {
    clips: Vec<NoiseClip>,
    sampler: WeightedIndex<f64>,
    by_id: HashMap<String, usize>,
}

impl NoisePool {
    pub fn from_clips(clips: Vec<NoiseClip>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::EmptyPool("no noise clips".into()));
        }
        let mut by_id = HashMap::new();
        for (i, c) in clips.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidParameter(format!("clip {} has weight {}", c.source_id, c.weight)));
            }
            if c.audio.is_empty() || c.audio.is_silent() {
                return Err(Error::InvalidParameter(format!("clip {} is silent", c.source_id)));
            }
            if by_id.insert(c.source_id.clone(), i).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate clip id {}", c.source_id)));
            }
        }
        let sampler = WeightedIndex::new(clips.iter().map(|c| c.weight))
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(Self { clips, sampler, by_id })
    }

    pub fn clips(&self) -> &[NoiseClip] {
        &self.clips
    }

    pub fn get(&self, id: &str) -> Option<&NoiseClip> {
        self.by_id.get(id).map(|&i| &self.clips[i])
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }

    /// Minutes of audio per class after replication by clip weight.
    pub fn effective_minutes(&self) -> BTreeMap<String, f64> {
        effective_minutes_by_class(
            self.clips.iter().map(|c| (c.source_class.as_str(), c.audio.duration_s(), c.weight)),
        )
    }
}

/// Sum `duration · weight` per class, in minutes.
pub fn effective_minutes_by_class<'a>(items: impl IntoIterator<Item = (&'a str, f64, f64)>) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (class, duration_s, weight) in items {
        *out.entry(class.to_string()).or_insert(0.0) += duration_s / 60.0 * weight;
    }
    out
}

/// Load clips listed as `clip-id class wav-path`; each clip takes its class weight.
pub fn build_noise_pool(manifest: impl AsRef<Path>, class_weights: &BTreeMap<String, f64>, rate_hz: u32) -> Result<NoisePool> {
    let manifest = manifest.as_ref();
    let mut clips = Vec::new();
    for l in read_manifest(manifest, 3)? {
        let (id, class, path) = (&l.fields[0], &l.fields[1], &l.fields[2]);
        let weight = *class_weights.get(class).ok_or_else(|| Error::UnknownClass(class.clone()))?;
        let audio = match read_wav(resolve(manifest, path)).and_then(|b| resample(&b, rate_hz)) {
            Ok(a) if !a.is_silent() => a,
            Ok(_) => {
                log::warn!("noise clip {id} is silent, skipped");
                continue;
            }
            Err(e) => {
                log::warn!("noise clip {id}: {e}");
                continue;
            }
        };
        clips.push(NoiseClip { audio, source_id: id.clone(), source_class: class.clone(), weight });
    }
    if clips.is_empty() {
        return Err(Error::EmptyPool(format!("no usable noise clips in {}", manifest.display())));
    }
    let pool = NoisePool::from_clips(clips)?;
    for (class, minutes) in pool.effective_minutes() {
        log::info!("noise class {class}: {minutes:.1} effective minutes");
    }
    Ok(pool)
}

/// Draw a clip by weight, a uniform start offset within it and a uniform SNR in the band.
pub fn draw_noise_event<R: Rng + ?Sized>(pool: &NoisePool, band: &SnrBand, rng: &mut R) -> NoiseEvent {
    let clip = &pool.clips[pool.sample_index(rng)];
    let offset = rng.gen_range(0..clip.audio.len());
    let snr_db = if band.low_db == band.high_db { band.low_db } else { rng.gen_range(band.low_db..=band.high_db) };
    NoiseEvent {
        clip_id: clip.source_id.clone(),
        start_offset_s: offset as f64 / clip.audio.sample_rate_hz() as f64,
        snr_db,
    }
}

/// Named bands with selection weights.
#[derive(Debug, Clone)]
pub struct BandMix {
    bands: Vec<SnrBand>,
    sampler: WeightedIndex<f64>,
}

impl BandMix {
    pub fn new(bands: Vec<(SnrBand, f64)>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::InvalidParameter("no SNR bands".into()));
        }
        for (b, _) in &bands {
            b.validate()?;
        }
        let sampler = WeightedIndex::new(bands.iter().map(|(_, w)| *w))
            .map_err(|e| Error::InvalidParameter(format!("SNR band weights: {e}")))?;
        Ok(Self { bands: bands.into_iter().map(|(b, _)| b).collect(), sampler })
    }

    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> &SnrBand {
        &self.bands[self.sampler.sample(rng)]
    }

    pub fn bands(&self) -> &[SnrBand] {
        &self.bands
    }
}

/// `len` noise samples starting at `offset`, wrapping around the clip.
pub fn tile_noise(noise: &[f64], offset: usize, len: usize) -> Vec<f64> {
    assert!(!noise.is_empty());
    let mut out = Vec::with_capacity(len);
    let mut i = offset % noise.len();
    while out.len() < len {
        let take = (noise.len() - i).min(len - out.len());
        out.extend_from_slice(&noise[i..i + take]);
        i = 0;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub audio: AudioBuffer,
    /// Linear gain applied to the noise before summation.
    pub noise_gain: f64,
    /// Factor applied to the whole mixture to keep it under full scale (1.0 if none).
    pub overflow_scale: f64,
}

const OVERFLOW_PEAK: f64 = 0.999;

/// Add noise from `event` at the requested SNR, powers measured over the whole speech buffer.
pub fn mix_at_snr(speech: &AudioBuffer, noise: &AudioBuffer, event: &NoiseEvent) -> Result<Mixture> {
    if speech.sample_rate_hz() != noise.sample_rate_hz() {
        return Err(Error::RateMismatch { left: speech.sample_rate_hz(), right: noise.sample_rate_hz() });
    }
    if speech.is_empty() || speech.is_silent() {
        return Err(Error::SilentInput);
    }
    if noise.is_empty() {
        return Err(Error::SilentNoise);
    }
    let offset = (event.start_offset_s * noise.sample_rate_hz() as f64).round() as usize;
    let segment = tile_noise(noise.samples(), offset, speech.len());
    let p_s = speech.mean_power();
    let p_n = crate::audio::mean_power(&segment);
    if p_n == 0.0 {
        return Err(Error::SilentNoise);
    }
    let gain = (p_s / (p_n * 10f64.powf(event.snr_db / 10.0))).sqrt();
    let mut mixed: Vec<f64> = speech.samples().iter().zip(&segment).map(|(s, n)| s + gain * n).collect();
    let peak = mixed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut overflow_scale = 1.0;
    if peak > 1.0 {
        overflow_scale = OVERFLOW_PEAK / peak;
        mixed.iter_mut().for_each(|v| *v *= overflow_scale);
    }
    Ok(Mixture {
        audio: AudioBuffer::from_parts(mixed, speech.sample_rate_hz()),
        noise_gain: gain,
        overflow_scale,
    })
}
