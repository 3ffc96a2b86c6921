//! Codec degradation: native G.711, zero-filled frame drops and an
//! external encode/decode command hook for other codecs.

pub mod g711;

use std::process::Command;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, resample, write_wav, AudioBuffer};
use crate::error::{Error, Result};

pub use g711::Law;

/// Default ceiling on the frame-drop rate.
pub const DROP_RATE_CEILING: f64 = 0.06;
pub const G711_RATE_HZ: u32 = 8000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    G711Mu,
    G711A,
    External,
}

impl CodecKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CodecKind::G711Mu => "g711_mu",
            CodecKind::G711A => "g711_a",
            CodecKind::External => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSpec {
    pub kind: CodecKind,
    /// Label written to manifests; defaults to the kind.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_frame_ms")]
    pub frame_ms: f64,
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default)]
    pub allow_drop_above_ceiling: bool,
    /// Shell command with `{in}` and `{out}` placeholders.
    #[serde(default)]
    pub encode_cmd: Option<String>,
    #[serde(default)]
    pub decode_cmd: Option<String>,
    /// Relative selection weight when several codecs are configured.
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_frame_ms() -> f64 {
    20.0
}

fn default_weight() -> f64 {
    1.0
}

impl CodecSpec {
    pub fn new(kind: CodecKind) -> Self {
        Self {
            kind,
            name: None,
            frame_ms: default_frame_ms(),
            drop_rate: 0.0,
            allow_drop_above_ceiling: false,
            encode_cmd: None,
            decode_cmd: None,
            weight: default_weight(),
        }
    }

    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(self.kind.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_ms > 0.0) {
            return Err(Error::InvalidParameter(format!("codec frame_ms {}", self.frame_ms)));
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(Error::InvalidParameter(format!("drop rate {}", self.drop_rate)));
        }
        if self.drop_rate > DROP_RATE_CEILING && !self.allow_drop_above_ceiling {
            return Err(Error::InvalidParameter(format!(
                "drop rate {} exceeds the {DROP_RATE_CEILING} ceiling (set allow_drop_above_ceiling)",
                self.drop_rate
            )));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidParameter(format!("codec weight {}", self.weight)));
        }
        if self.kind == CodecKind::External {
            for (what, cmd) in [("encode", &self.encode_cmd), ("decode", &self.decode_cmd)] {
                let cmd = cmd.as_deref().ok_or_else(|| Error::InvalidParameter(format!("external codec needs {what}_cmd")))?;
                if !(cmd.contains("{in}") && cmd.contains("{out}")) {
                    return Err(Error::InvalidParameter(format!("{what}_cmd must contain {{in}} and {{out}}")));
                }
            }
        }
        Ok(())
    }
}

/// Encode every sample to 8-bit G.711 and decode it back.
pub fn g711_roundtrip(buffer: &AudioBuffer, law: Law) -> Result<AudioBuffer> {
    if buffer.sample_rate_hz() != G711_RATE_HZ {
        return Err(Error::WrongSampleRate(buffer.sample_rate_hz()));
    }
    let pcm: Vec<i16> = buffer
        .to_pcm16()
        .into_iter()
        .map(|v| g711::decode(law, g711::encode(law, v)))
        .collect();
    Ok(AudioBuffer::from_pcm16(&pcm, G711_RATE_HZ))
}

pub fn frame_len(frame_ms: f64, sample_rate_hz: u32) -> usize {
    ((frame_ms * sample_rate_hz as f64 / 1000.0).round() as usize).max(1)
}

/// Independent Bernoulli draw per frame: `true` means dropped.
pub fn drop_mask<R: Rng + ?Sized>(n_frames: usize, drop_rate: f64, rng: &mut R) -> Vec<bool> {
    (0..n_frames).map(|_| rng.gen::<f64>() < drop_rate).collect()
}

/// Zero out frames chosen by [`drop_mask`]; the final partial frame is a frame too.
pub fn drop_frames<R: Rng + ?Sized>(buffer: &AudioBuffer, spec: &CodecSpec, rng: &mut R) -> Result<AudioBuffer> {
    spec.validate()?;
    let flen = frame_len(spec.frame_ms, buffer.sample_rate_hz());
    let n_frames = buffer.len().div_ceil(flen);
    let mask = drop_mask(n_frames, spec.drop_rate, rng);
    let mut out = buffer.samples().to_vec();
    for (frame, dropped) in out.chunks_mut(flen).zip(&mask) {
        if *dropped {
            frame.fill(0.0);
        }
    }
    Ok(AudioBuffer::from_parts(out, buffer.sample_rate_hz()))
}

/// Run the external encode then decode commands through PCM16 WAV files in
/// a private scratch directory. The result is resampled to the input rate
/// if needed and truncated or zero-padded to the input length.
pub fn external_codec_roundtrip(buffer: &AudioBuffer, spec: &CodecSpec) -> Result<AudioBuffer> {
    spec.validate()?;
    let (Some(enc), Some(dec)) = (spec.encode_cmd.as_deref(), spec.decode_cmd.as_deref()) else {
        return Err(Error::InvalidParameter("external codec commands missing".into()));
    };
    let scratch = tempfile::Builder::new().prefix("pscaug-codec").tempdir()?;
    let input = scratch.path().join("input.wav");
    let encoded = scratch.path().join("encoded.bin");
    let decoded = scratch.path().join("decoded.wav");
    write_wav(buffer, &input)?;
    run_template("encode", enc, &input, &encoded)?;
    run_template("decode", dec, &encoded, &decoded)?;
    let out = read_wav(&decoded).map_err(|e| Error::OutputUnreadable(e.to_string()))?;
    let out = resample(&out, buffer.sample_rate_hz())?;
    let mut samples = out.into_samples();
    samples.resize(buffer.len(), 0.0);
    Ok(AudioBuffer::from_parts(samples, buffer.sample_rate_hz()))
}

fn shell_quote(p: &std::path::Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

fn run_template(stage: &'static str, template: &str, input: &std::path::Path, output: &std::path::Path) -> Result<()> {
    let cmd = template.replace("{in}", &shell_quote(input)).replace("{out}", &shell_quote(output));
    log::debug!("codec {stage}: {cmd}");
    let result = Command::new("sh").arg("-c").arg(&cmd).output()?;
    if !result.status.success() {
        return Err(Error::CodecCommandFailed {
            stage,
            code: result.status.code(),
            stderr: String::from_utf8_lossy(&result.stderr).trim().to_string(),
        });
    }
    Ok(())
}

/// Codec roundtrip followed by frame drops, at whatever rate the codec needs.
/// G.711 runs at 8 kHz; other rates are converted there and back.
pub fn apply_codec<R: Rng + ?Sized>(buffer: &AudioBuffer, spec: &CodecSpec, rng: &mut R) -> Result<AudioBuffer> {
    spec.validate()?;
    let rate = buffer.sample_rate_hz();
    let coded = match spec.kind {
        CodecKind::G711Mu | CodecKind::G711A => {
            let law = if spec.kind == CodecKind::G711Mu { Law::Mu } else { Law::A };
            let narrow = resample(buffer, G711_RATE_HZ)?;
            let coded = g711_roundtrip(&narrow, law)?;
            let dropped = drop_frames(&coded, spec, rng)?;
            let mut back = resample(&dropped, rate)?.into_samples();
            back.resize(buffer.len(), 0.0);
            return Ok(AudioBuffer::from_parts(back, rate));
        }
        CodecKind::External => external_codec_roundtrip(buffer, spec)?,
    };
    drop_frames(&coded, spec, rng)
}
