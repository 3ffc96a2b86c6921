//! Audio buffers, WAV I/O, level measurement, gain staging and resampling.
//!
//! Samples are held as `f64` at nominal full scale `[-1.0, 1.0]`. Every DSP
//! module in the crate consumes and produces [`AudioBuffer`]s.

use std::path::Path;

use hound::{SampleFormat, WavSpec};

use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Self {
        assert!(sample_rate_hz > 0);
        Self { samples: vec![0.0; len], sample_rate_hz }
    }

    /// Internal constructor for transforms whose output is finite by construction.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        debug_assert!(sample_rate_hz > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self { samples, sample_rate_hz }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }

    /// Mean of squared samples; zero for an empty buffer.
    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    /// Copy of samples `[start, end)`, clamped to the buffer.
    pub fn slice(&self, start: usize, end: usize) -> AudioBuffer {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        AudioBuffer::from_parts(self.samples[start..end].to_vec(), self.sample_rate_hz)
    }

    pub fn scaled(&self, factor: f64) -> AudioBuffer {
        AudioBuffer::from_parts(
            self.samples.iter().map(|s| s * factor).collect(),
            self.sample_rate_hz,
        )
    }

    /// Quantize to signed 16-bit PCM with saturation at the integer range.
    pub fn to_pcm16(&self) -> Vec<i16> {
        self.samples.iter().map(|&s| f64_to_pcm16(s)).collect()
    }

    pub fn from_pcm16(pcm: &[i16], sample_rate_hz: u32) -> AudioBuffer {
        AudioBuffer::from_parts(
            pcm.iter().map(|&v| v as f64 / PCM16_SCALE).collect(),
            sample_rate_hz,
        )
    }
}

pub(crate) fn mean_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

pub(crate) const PCM16_SCALE: f64 = 32768.0;

pub(crate) fn f64_to_pcm16(s: f64) -> i16 {
    (s * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn amplitude_to_db(amplitude: f64) -> f64 {
    if amplitude > 0.0 {
        20.0 * amplitude.log10()
    } else {
        f64::NEG_INFINITY
    }
}

/// Peak and RMS level of a buffer relative to digital full scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelReport {
    /// `20·log10(max |s|)`; negative infinity for a silent buffer.
    pub peak_dbfs: f64,
    /// `20·log10(rms)`, so a full-scale square wave reads 0 dBFS.
    pub rms_dbfs: f64,
    /// Share of samples at or beyond full scale (`|s| >= 1`).
    pub clipped_fraction: f64,
}

pub fn measure_levels(buffer: &AudioBuffer) -> LevelReport {
    let s = buffer.samples();
    let clipped = s.iter().filter(|v| v.abs() >= 1.0).count();
    LevelReport {
        peak_dbfs: amplitude_to_db(buffer.peak()),
        rms_dbfs: amplitude_to_db(buffer.mean_power().sqrt()),
        clipped_fraction: if s.is_empty() { 0.0 } else { clipped as f64 / s.len() as f64 },
    }
}

/// Scale the buffer so its peak sits at `target_dbfs`.
pub fn peak_normalize(buffer: &AudioBuffer, target_dbfs: f64) -> Result<AudioBuffer> {
    let peak = buffer.peak();
    if peak == 0.0 {
        return Err(Error::SilentInput);
    }
    let target = db_to_amplitude(target_dbfs);
    if !target.is_finite() {
        return Err(Error::InvalidParameter(format!("target level {target_dbfs} dBFS")));
    }
    Ok(buffer.scaled(target / peak))
}

/// Apply `gain_db` and hard-clip to full scale.
///
/// Returns the clipped buffer together with the share of samples whose
/// amplified magnitude exceeded 1.0.
pub fn gain_and_clip(buffer: &AudioBuffer, gain_db: f64) -> (AudioBuffer, f64) {
    let gain = db_to_amplitude(gain_db);
    let mut clipped = 0usize;
    let samples = buffer
        .samples()
        .iter()
        .map(|&s| {
            let v = s * gain;
            if v.abs() > 1.0 {
                clipped += 1;
                v.signum()
            } else {
                v
            }
        })
        .collect::<Vec<_>>();
    let fraction = if samples.is_empty() { 0.0 } else { clipped as f64 / samples.len() as f64 };
    (AudioBuffer::from_parts(samples, buffer.sample_rate_hz()), fraction)
}

/// Read a RIFF/WAVE file (PCM16 or float32, any channel count) as mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedWav { path: path.into(), reason: "zero channels".into() });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.into(),
                reason: format!("{bits}-bit {format:?} samples"),
            })
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(Error::MalformedWav { path: path.into(), reason: "partial final frame".into() });
    }
    if let Some(bad) = interleaved.iter().find(|v| !v.is_finite()) {
        return Err(Error::MalformedWav { path: path.into(), reason: format!("non-finite sample {bad}") });
    }
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioBuffer::new(mono, spec.sample_rate)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io)
            if matches!(io.kind(), std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other) =>
        {
            Error::MalformedWav { path: path.into(), reason: format!("truncated data ({io})") }
        }
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::Unsupported => Error::UnsupportedEncoding {
            path: path.into(),
            reason: "compressed or unknown format tag".into(),
        },
        other => Error::MalformedWav { path: path.into(), reason: other.to_string() },
    }
}

/// Write a mono 16-bit PCM WAV; samples beyond full scale saturate.
pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::new(std::io::ErrorKind::Other, other.to_string())),
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(to_io)?;
    for v in buffer.to_pcm16() {
        writer.write_sample(v).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

const KAISER_BETA: f64 = 8.6;
const HALF_TAPS: usize = 32;
const MAX_CACHED_PHASES: u64 = 4096;

/// Windowed-sinc sample-rate conversion.
///
/// The anti-alias cutoff sits at 0.9 of the lower Nyquist frequency. The
/// kernel spans 32 samples either side at the lower of the two rates and is
/// normalized per phase for unity DC gain. Samples past either end are
/// taken as the nearest edge sample.
pub fn resample(buffer: &AudioBuffer, target_rate_hz: u32) -> Result<AudioBuffer> {
    if target_rate_hz == 0 {
        return Err(Error::InvalidParameter("target sample rate must be positive".into()));
    }
    let src = buffer.sample_rate_hz() as u64;
    let tgt = target_rate_hz as u64;
    if src == tgt || buffer.is_empty() {
        return Ok(AudioBuffer::from_parts(buffer.samples().to_vec(), target_rate_hz));
    }
    let g = gcd(src, tgt);
    let (up, down) = (tgt / g, src / g);
    let in_len = buffer.len() as u64;
    let out_len = ((in_len as u128 * tgt as u128 + src as u128 / 2) / src as u128) as usize;

    let cutoff_hz = 0.9 * (src.min(tgt) as f64 / 2.0);
    let fc = cutoff_hz / src as f64;
    let half_width = HALF_TAPS as f64 * (src as f64 / tgt as f64).max(1.0);
    let reach = half_width.ceil() as i64;

    let kernel = |phase: u64| -> Vec<f64> {
        let frac = phase as f64 / up as f64;
        let mut taps: Vec<f64> = (-reach + 1..=reach)
            .map(|k| windowed_sinc(frac - k as f64, fc, half_width))
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        taps
    };
    let cache: Option<Vec<Vec<f64>>> = (up <= MAX_CACHED_PHASES).then(|| (0..up).map(kernel).collect());

    let x = buffer.samples();
    let last = x.len() as i64 - 1;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let owned;
        let taps = match &cache {
            Some(c) => &c[phase as usize],
            None => {
                owned = kernel(phase);
                &owned
            }
        };
        let mut acc = 0.0;
        for (i, &w) in taps.iter().enumerate() {
            let j = (base - reach + 1 + i as i64).clamp(0, last) as usize;
            acc += w * x[j];
        }
        out.push(acc);
    }
    Ok(AudioBuffer::from_parts(out, target_rate_hz))
}

fn windowed_sinc(t: f64, fc: f64, half_width: f64) -> f64 {
    let u = t / half_width;
    if u.abs() > 1.0 {
        return 0.0;
    }
    let arg = 2.0 * fc * t;
    let sinc = if arg.abs() < 1e-12 {
        1.0
    } else {
        (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
    };
    2.0 * fc * sinc * bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA)
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
