//! Synthetic corpora for smoke tests and demos: speech-like bursts,
//! exponentially decaying impulse responses and noise clips, written
//! together with manifests and a pipeline config.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, AudioBuffer};
use crate::error::Result;
use crate::pipeline::PipelineConfig;

/// Alternating voiced bursts and pauses with a drifting pitch.
pub fn speech_like(duration_s: f64, rate: u32, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration_s * rate as f64) as usize;
    let mut x = vec![0.0; n];
    let mut i = (rng.gen_range(0.1..0.4) * rate as f64) as usize;
    while i < n {
        let len = ((rng.gen_range(0.4..1.6) * rate as f64) as usize).min(n - i);
        let f0: f64 = rng.gen_range(90.0..220.0);
        let amp: f64 = rng.gen_range(0.2..0.6);
        let mut phase = 0.0;
        for k in 0..len {
            let t = k as f64 / len as f64;
            let env = (PI * t).sin().powf(0.5);
            let f = f0 * (1.0 + 0.1 * (2.0 * PI * 3.0 * k as f64 / rate as f64).sin());
            phase += 2.0 * PI * f / rate as f64;
            let v = (1..=5).map(|h| (h as f64 * phase).sin() / h as f64).sum::<f64>();
            x[i + k] = amp * env * v * 0.5 + rng.gen_range(-0.005..0.005);
        }
        i += len + (rng.gen_range(0.15..0.6) * rate as f64) as usize;
    }
    AudioBuffer::new(x, rate).expect("finite samples")
}

/// White noise under an envelope whose energy decays 60 dB in `t60` seconds.
pub fn exponential_ir(t60: f64, rate: u32, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (2.0 * t60 * rate as f64).ceil() as usize;
    let tau = t60 / (3.0 * std::f64::consts::LN_10);
    let samples = (0..n)
        .map(|i| {
            let u: f64 = rng.gen_range(-1.0..1.0);
            u * (-(i as f64 / rate as f64) / tau).exp()
        })
        .collect();
    AudioBuffer::new(samples, rate).expect("finite samples")
}

/// Band-limited-ish noise: white noise through a one-pole smoother.
pub fn noise_clip(duration_s: f64, rate: u32, smoothing: f64, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration_s * rate as f64) as usize;
    let mut y = 0.0;
    let samples = (0..n)
        .map(|_| {
            y = smoothing * y + (1.0 - smoothing) * rng.gen_range(-1.0..1.0);
            y * 0.5
        })
        .collect();
    AudioBuffer::new(samples, rate).expect("finite samples")
}

pub struct ToyCorpus {
    pub root: PathBuf,
    pub config_path: PathBuf,
    pub config: PipelineConfig,
}

/// Write `n_files` recordings, four IRs (two above the 0.5 s cap) and four
/// noise clips of two classes under `root`, plus `pipeline.toml`.
pub fn write_toy_corpus(root: &Path, n_files: usize, rate: u32, seed: u64) -> Result<ToyCorpus> {
    let audio_dir = root.join("audio");
    let ir_dir = root.join("irs");
    let noise_dir = root.join("noise");
    for d in [&audio_dir, &ir_dir, &noise_dir] {
        std::fs::create_dir_all(d)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut corpus = String::new();
    for i in 0..n_files {
        let id = format!("rec{i:03}");
        let dur = rng.gen_range(15.0..30.0);
        write_wav(&speech_like(dur, rate, rng.gen()), audio_dir.join(format!("{id}.wav")))?;
        let _ = writeln!(corpus, "{id}\taudio/{id}.wav");
    }
    std::fs::write(root.join("corpus.tsv"), corpus)?;

    let mut irs = String::new();
    for (k, t60) in [0.1, 0.3, 0.7, 0.9].into_iter().enumerate() {
        let id = format!("ir{k}");
        write_wav(&exponential_ir(t60, rate, rng.gen()), ir_dir.join(format!("{id}.wav")))?;
        let _ = writeln!(irs, "{id}\tirs/{id}.wav");
    }
    std::fs::write(root.join("irs.tsv"), irs)?;

    let mut noise = String::new();
    for (k, (class, smooth)) in [("freesound", 0.0), ("freesound", 0.9), ("reverbdb", 0.5), ("reverbdb", 0.98)].into_iter().enumerate() {
        let id = format!("n{k}");
        write_wav(&noise_clip(rng.gen_range(3.0..6.0), rate, smooth, rng.gen()), noise_dir.join(format!("{id}.wav")))?;
        let _ = writeln!(noise, "{id}\t{class}\tnoise/{id}.wav");
    }
    std::fs::write(root.join("noise.tsv"), noise)?;

    let config = PipelineConfig {
        master_seed: seed,
        sample_rate_hz: rate,
        corpus_manifest: root.join("corpus.tsv"),
        ir_manifest: Some(root.join("irs.tsv")),
        noise_manifest: Some(root.join("noise.tsv")),
        output_dir: root.join("out"),
        ..Default::default()
    };
    let config_path = root.join("pipeline.toml");
    std::fs::write(&config_path, config.to_toml_string()?)?;
    Ok(ToyCorpus { root: root.to_path_buf(), config_path, config })
}
