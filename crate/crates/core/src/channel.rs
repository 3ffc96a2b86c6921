//! Walkie-talkie channel: peak normalization, overdrive with hard clipping,
//! a randomly chosen Butterworth high-pass and a modulated-delay phaser.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{gain_and_clip, peak_normalize, AudioBuffer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaserParams {
    pub in_gain: f64,
    pub out_gain: f64,
    pub delay_ms: f64,
    pub decay: f64,
    pub speed_hz: f64,
}

impl Default for PhaserParams {
    fn default() -> Self {
        Self { in_gain: 0.8, out_gain: 0.74, delay_ms: 3.0, decay: 0.4, speed_hz: 0.5 }
    }
}

impl PhaserParams {
    pub fn validate(&self) -> Result<()> {
        // decay = 0 is accepted: it degenerates to a scaled identity
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::InvalidParameter(format!("phaser decay {} outside [0, 1)", self.decay)));
        }
        if !(self.delay_ms > 0.0 && self.speed_hz > 0.0) {
            return Err(Error::InvalidParameter("phaser delay and speed must be positive".into()));
        }
        if !(self.in_gain.is_finite() && self.out_gain.is_finite()) {
            return Err(Error::InvalidParameter("phaser gains must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub gain_db: f64,
    pub cutoff_choices_hz: Vec<f64>,
    pub phaser: PhaserParams,
    /// Share of recordings routed through the channel.
    pub apply_probability: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            gain_db: 20.0,
            cutoff_choices_hz: vec![300.0, 600.0, 1000.0, 1500.0],
            phaser: PhaserParams::default(),
            apply_probability: 0.5,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if !(self.gain_db >= 0.0 && self.gain_db.is_finite()) {
            return Err(Error::InvalidParameter(format!("channel gain {} dB", self.gain_db)));
        }
        if self.cutoff_choices_hz.is_empty() {
            return Err(Error::InvalidParameter("no high-pass cutoffs configured".into()));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        for &c in &self.cutoff_choices_hz {
            if c >= nyquist {
                return Err(Error::CutoffAboveNyquist { cutoff_hz: c, nyquist_hz: nyquist });
            }
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(format!("cutoff {c} Hz")));
            }
        }
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::InvalidParameter(format!("apply_probability {}", self.apply_probability)));
        }
        self.phaser.validate()
    }

    /// Seeded coin flip deciding whether a recording goes through the channel.
    pub fn should_apply<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        rng.gen::<f64>() < self.apply_probability
    }

    pub fn choose_cutoff<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.cutoff_choices_hz[rng.gen_range(0..self.cutoff_choices_hz.len())]
    }
}

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Butterworth (Q = 1/sqrt 2) high-pass via the bilinear transform with
    /// prewarping, so the magnitude is exactly -3 dB at the cutoff.
    pub fn butterworth_highpass(cutoff_hz: f64, sample_rate_hz: u32) -> Result<Self> {
        let nyquist = sample_rate_hz as f64 / 2.0;
        if cutoff_hz >= nyquist {
            return Err(Error::CutoffAboveNyquist { cutoff_hz, nyquist_hz: nyquist });
        }
        if !(cutoff_hz > 0.0) {
            return Err(Error::InvalidParameter(format!("cutoff {cutoff_hz} Hz")));
        }
        let w0 = 2.0 * PI * cutoff_hz / sample_rate_hz as f64;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 / SQRT_2);
        let a0 = 1.0 + alpha;
        Ok(Self {
            b: [(1.0 + cos) / 2.0 / a0, -(1.0 + cos) / a0, (1.0 + cos) / 2.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        })
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b[0] * v + z1;
                z1 = self.b[1] * v - self.a[0] * y + z2;
                z2 = self.b[2] * v - self.a[1] * y;
                y
            })
            .collect()
    }
}

pub fn highpass(buffer: &AudioBuffer, cutoff_hz: f64) -> Result<AudioBuffer> {
    let f = Biquad::butterworth_highpass(cutoff_hz, buffer.sample_rate_hz())?;
    Ok(AudioBuffer::from_parts(f.process(buffer.samples()), buffer.sample_rate_hz()))
}

/// `y[n] = out_gain · (in_gain·x[n] + decay·x[n − d[n]])` with
/// `d[n] = D·(1 + sin(2π·speed·n/rate))/2`, `D` the delay in samples, and
/// linear interpolation between neighbouring samples.
pub fn phaser(buffer: &AudioBuffer, params: &PhaserParams) -> Result<AudioBuffer> {
    params.validate()?;
    let rate = buffer.sample_rate_hz() as f64;
    let max_delay = params.delay_ms * rate / 1000.0;
    if max_delay < 1.0 {
        return Err(Error::InvalidParameter(format!("phaser delay {max_delay:.3} samples is below one sample")));
    }
    let x = buffer.samples();
    let at = |i: isize| if i >= 0 { x[i as usize] } else { 0.0 };
    let out = (0..x.len())
        .map(|n| {
            let d = max_delay * (1.0 + (2.0 * PI * params.speed_hz * n as f64 / rate).sin()) / 2.0;
            let pos = n as f64 - d;
            let i0 = pos.floor();
            let frac = pos - i0;
            let delayed = (1.0 - frac) * at(i0 as isize) + frac * at(i0 as isize + 1);
            params.out_gain * (params.in_gain * x[n] + params.decay * delayed)
        })
        .collect();
    Ok(AudioBuffer::from_parts(out, buffer.sample_rate_hz()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelStage {
    Normalize,
    Clip,
    HighPass,
    Phaser,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub stages: Vec<ChannelStage>,
    pub clipped_fraction: f64,
    pub cutoff_hz: f64,
}

/// Run the four channel stages in order, drawing the cutoff from `rng`.
pub fn walkie_talkie<R: Rng + ?Sized>(buffer: &AudioBuffer, config: &ChannelConfig, rng: &mut R) -> Result<(AudioBuffer, ChannelTrace)> {
    let cutoff = config.choose_cutoff(rng);
    walkie_talkie_with_cutoff(buffer, config, cutoff)
}

/// The channel chain with a fixed cutoff; used for replay from a record.
pub fn walkie_talkie_with_cutoff(buffer: &AudioBuffer, config: &ChannelConfig, cutoff_hz: f64) -> Result<(AudioBuffer, ChannelTrace)> {
    config.validate(buffer.sample_rate_hz())?;
    let mut stages = Vec::with_capacity(4);
    let x = peak_normalize(buffer, 0.0)?;
    stages.push(ChannelStage::Normalize);
    let (x, clipped_fraction) = gain_and_clip(&x, config.gain_db);
    stages.push(ChannelStage::Clip);
    let x = highpass(&x, cutoff_hz)?;
    // the filter can ring past full scale after clipping; the radio output stage saturates
    let x = AudioBuffer::from_parts(x.samples().iter().map(|v| v.clamp(-1.0, 1.0)).collect(), x.sample_rate_hz());
    stages.push(ChannelStage::HighPass);
    let x = phaser(&x, &config.phaser)?;
    stages.push(ChannelStage::Phaser);
    Ok((x, ChannelTrace { stages, clipped_fraction, cutoff_hz }))
}
