use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::codec::{CodecKind, CodecSpec};
use crate::error::{Error, Result};
use crate::noise::SnrBand;
use crate::vad::VadConfig;

/// Granularity at which a stage draws its parameters and runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageLevel {
    Chunk,
    Recording,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReverbStage {
    pub enabled: bool,
    pub level: StageLevel,
    pub probability: f64,
    pub max_rt60_s: f64,
}

impl Default for ReverbStage {
    fn default() -> Self {
        Self { enabled: true, level: StageLevel::Chunk, probability: 1.0, max_rt60_s: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedBand {
    pub name: String,
    pub low_db: f64,
    pub high_db: f64,
    pub weight: f64,
}

impl WeightedBand {
    pub fn new(band: SnrBand, weight: f64) -> Self {
        Self { name: band.name, low_db: band.low_db, high_db: band.high_db, weight }
    }

    pub fn band(&self) -> SnrBand {
        SnrBand { name: self.name.clone(), low_db: self.low_db, high_db: self.high_db }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseStage {
    pub enabled: bool,
    pub level: StageLevel,
    pub probability: f64,
    /// Replication factor per noise class.
    pub class_weights: BTreeMap<String, f64>,
    pub bands: Vec<WeightedBand>,
}

impl Default for NoiseStage {
    fn default() -> Self {
        Self {
            enabled: true,
            level: StageLevel::Chunk,
            probability: 1.0,
            class_weights: BTreeMap::from([("freesound".to_string(), 4.0), ("reverbdb".to_string(), 1.0)]),
            bands: vec![
                WeightedBand::new(SnrBand::low(), 0.5),
                WeightedBand::new(SnrBand::mid(), 0.5),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelStage {
    pub enabled: bool,
    pub level: StageLevel,
    pub params: ChannelConfig,
}

impl Default for ChannelStage {
    fn default() -> Self {
        Self { enabled: true, level: StageLevel::Recording, params: ChannelConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecStage {
    pub enabled: bool,
    pub level: StageLevel,
    pub probability: f64,
    pub specs: Vec<CodecSpec>,
}

impl Default for CodecStage {
    fn default() -> Self {
        let spec = |kind| CodecSpec { drop_rate: 0.06, ..CodecSpec::new(kind) };
        Self {
            enabled: true,
            level: StageLevel::Recording,
            probability: 1.0,
            specs: vec![spec(CodecKind::G711Mu), spec(CodecKind::G711A)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub workers: usize,
    pub sample_rate_hz: u32,
    /// Lines `recording-id wav-path`.
    pub corpus_manifest: PathBuf,
    pub ir_manifest: Option<PathBuf>,
    pub noise_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Externally produced speech segments; recordings missing from it use the energy detector.
    pub segments: Option<PathBuf>,
    pub vad: VadConfig,
    pub reverb: ReverbStage,
    pub noise: NoiseStage,
    pub channel: ChannelStage,
    pub codec: CodecStage,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            workers: 1,
            sample_rate_hz: 16000,
            corpus_manifest: PathBuf::from("corpus.tsv"),
            ir_manifest: None,
            noise_manifest: None,
            output_dir: PathBuf::from("augmented"),
            segments: None,
            vad: VadConfig::default(),
            reverb: ReverbStage::default(),
            noise: NoiseStage::default(),
            channel: ChannelStage::default(),
            codec: CodecStage::default(),
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} probability {p} outside [0,1]")));
    }
    Ok(())
}

impl PipelineConfig {
    /// Parse TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_manifest);
        fix(&mut self.output_dir);
        for p in [&mut self.ir_manifest, &mut self.noise_manifest, &mut self.segments].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample_rate_hz must be positive".into()));
        }
        self.vad.validate()?;
        check_probability("reverb", self.reverb.probability)?;
        check_probability("noise", self.noise.probability)?;
        check_probability("codec", self.codec.probability)?;
        if self.reverb.enabled {
            if self.ir_manifest.is_none() {
                return Err(Error::Config("reverb enabled but ir_manifest not set".into()));
            }
            if !(self.reverb.max_rt60_s > 0.0) {
                return Err(Error::Config(format!("max_rt60_s {}", self.reverb.max_rt60_s)));
            }
        }
        if self.noise.enabled {
            if self.noise_manifest.is_none() {
                return Err(Error::Config("noise enabled but noise_manifest not set".into()));
            }
            if self.noise.bands.is_empty() {
                return Err(Error::Config("no SNR bands".into()));
            }
            let total: f64 = self.noise.bands.iter().map(|b| b.weight).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("SNR band weights sum to {total}, expected 1")));
            }
            let mut names = BTreeSet::new();
            for b in &self.noise.bands {
                b.band().validate()?;
                if !(b.weight >= 0.0) {
                    return Err(Error::Config(format!("band {} weight {}", b.name, b.weight)));
                }
                if !names.insert(b.name.as_str()) {
                    return Err(Error::Config(format!("duplicate SNR band {}", b.name)));
                }
            }
        }
        if self.channel.enabled {
            self.channel.params.validate(self.sample_rate_hz)?;
        }
        if self.codec.enabled {
            if self.codec.specs.is_empty() {
                return Err(Error::Config("codec stage enabled with no codecs".into()));
            }
            let mut labels = BTreeSet::new();
            for s in &self.codec.specs {
                s.validate()?;
                if !labels.insert(s.label()) {
                    return Err(Error::Config(format!("duplicate codec label {}", s.label())));
                }
            }
        }
        Ok(())
    }

    /// Lift the frame-drop ceiling on every codec.
    pub fn allow_drop_above_ceiling(&mut self) {
        for s in &mut self.codec.specs {
            s.allow_drop_above_ceiling = true;
        }
    }

    pub fn disable_all_stages(&mut self) {
        self.reverb.enabled = false;
        self.noise.enabled = false;
        self.channel.enabled = false;
        self.codec.enabled = false;
    }
}
