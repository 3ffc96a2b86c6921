//! Impulse-response reverberation: RT60 estimation by Schroeder backward
//! integration, RT60-gated IR pools and convolution.

use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{read_wav, resample, AudioBuffer};
use crate::error::{Error, Result};
use crate::manifest::{read_manifest, resolve};

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub ir: AudioBuffer,
    pub rt60_s: f64,
    pub source_id: String,
}

/// What to report when the -5..-25 dB fit window holds fewer than two points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegenerateFit {
    #[default]
    Zero,
    Error,
}

const FIT_UPPER_DB: f64 = -5.0;
const FIT_LOWER_DB: f64 = -25.0;
/// Estimates are reported on a microsecond grid.
const RT60_RESOLUTION_S: f64 = 1e-6;

/// Schroeder energy decay curve in dB, normalized to 0 dB at the first sample.
pub fn energy_decay_curve_db(ir: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = ir
        .iter()
        .rev()
        .map(|s| {
            acc += s * s;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|&e| if e > 0.0 { 10.0 * (e / total).log10() } else { f64::NEG_INFINITY })
        .collect()
}

/// T20 estimate extrapolated to 60 dB.
pub fn estimate_rt60(ir: &AudioBuffer) -> Result<f64> {
    estimate_rt60_with(ir, DegenerateFit::Zero)
}

pub fn estimate_rt60_with(ir: &AudioBuffer, degenerate: DegenerateFit) -> Result<f64> {
    if ir.is_empty() || ir.is_silent() {
        return Err(Error::SilentInput);
    }
    let edc = energy_decay_curve_db(ir.samples());
    if !edc.iter().any(|&d| d <= FIT_LOWER_DB) {
        return Err(Error::DecayTooShort);
    }
    let rate = ir.sample_rate_hz() as f64;
    let (mut n, mut st, mut sd, mut stt, mut std_) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &d) in edc.iter().enumerate() {
        if d < FIT_LOWER_DB {
            break;
        }
        if d <= FIT_UPPER_DB {
            let t = i as f64 / rate;
            n += 1.0;
            st += t;
            sd += d;
            stt += t * t;
            std_ += t * d;
        }
    }
    let denom = n * stt - st * st;
    if n < 2.0 || denom <= 0.0 {
        return match degenerate {
            DegenerateFit::Zero => Ok(0.0),
            DegenerateFit::Error => Err(Error::DecayTooShort),
        };
    }
    let slope = (n * std_ - st * sd) / denom;
    if slope >= 0.0 {
        return Err(Error::DecayTooShort);
    }
    let rt60 = -60.0 / slope;
    Ok((rt60 / RT60_RESOLUTION_S).round() * RT60_RESOLUTION_S)
}

/// IRs whose estimated RT60 is strictly below `max_rt60_s`.
#[derive(Debug, Clone)]
pub struct IrPool {
    entries: Vec<ImpulseResponse>,
    max_rt60_s: f64,
}

impl IrPool {
    pub fn new(candidates: Vec<ImpulseResponse>, max_rt60_s: f64) -> (Self, Vec<PoolReportEntry>) {
        let mut entries = Vec::new();
        let mut report = Vec::new();
        for ir in candidates {
            let kept = ir.rt60_s < max_rt60_s;
            report.push(PoolReportEntry { id: ir.source_id.clone(), rt60_s: Some(ir.rt60_s), kept });
            if kept {
                entries.push(ir);
            }
        }
        (Self { entries, max_rt60_s }, report)
    }

    pub fn entries(&self) -> &[ImpulseResponse] {
        &self.entries
    }

    pub fn max_rt60_s(&self) -> f64 {
        self.max_rt60_s
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImpulseResponse> {
        self.entries.iter().find(|e| e.source_id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolReportEntry {
    pub id: String,
    /// `None` when the IR could not be read or measured.
    pub rt60_s: Option<f64>,
    pub kept: bool,
}

/// Pool report lines: `ir-id rt60 kept|dropped`.
pub fn format_pool_report(report: &[PoolReportEntry]) -> String {
    let mut out = String::new();
    for e in report {
        let rt = e.rt60_s.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "{} {} {}", e.id, rt, if e.kept { "kept" } else { "dropped" });
    }
    out
}

/// Load IRs listed as `ir-id wav-path`, resample to `rate_hz`, estimate RT60
/// and keep those below `max_rt60_s`. Unreadable or unmeasurable IRs are
/// reported as dropped.
pub fn build_ir_pool(manifest: impl AsRef<Path>, max_rt60_s: f64, rate_hz: u32) -> Result<(IrPool, Vec<PoolReportEntry>)> {
    let manifest = manifest.as_ref();
    let lines = read_manifest(manifest, 2)?;
    let mut candidates = Vec::new();
    let mut failed = Vec::new();
    for l in &lines {
        let id = l.fields[0].clone();
        let loaded = read_wav(resolve(manifest, &l.fields[1]))
            .and_then(|b| resample(&b, rate_hz))
            .and_then(|ir| estimate_rt60(&ir).map(|rt60| ImpulseResponse { ir, rt60_s: rt60, source_id: id.clone() }));
        match loaded {
            Ok(ir) => candidates.push(ir),
            Err(e) => {
                log::warn!("impulse response {id}: {e}");
                failed.push(PoolReportEntry { id, rt60_s: None, kept: false });
            }
        }
    }
    let (pool, mut report) = IrPool::new(candidates, max_rt60_s);
    report.extend(failed);
    let dropped = report.iter().filter(|e| !e.kept).count();
    log::info!("IR pool: {} kept, {} dropped", pool.len(), dropped);
    if pool.is_empty() {
        return Err(Error::EmptyPool(format!("no impulse response below RT60 {max_rt60_s} s in {}", manifest.display())));
    }
    Ok((pool, report))
}

/// `(x * h)[0..out_len]` by direct summation.
pub fn convolve_direct(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_len];
    for (n, yn) in y.iter_mut().enumerate() {
        let k_lo = n.saturating_sub(x.len().saturating_sub(1));
        let k_hi = n.min(h.len().saturating_sub(1));
        let mut acc = 0.0;
        if !h.is_empty() && !x.is_empty() {
            for k in k_lo..=k_hi {
                acc += h[k] * x[n - k];
            }
        }
        *yn = acc;
    }
    y
}

/// `(x * h)[0..out_len]` by FFT overlap-add.
pub fn convolve_fft(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_len];
    if x.is_empty() || h.is_empty() || out_len == 0 {
        return y;
    }
    let m = h.len();
    let n_fft = (2 * m).max(1024).next_power_of_two();
    let block = n_fft - m + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);

    let mut hf: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    hf.resize(n_fft, Complex::new(0.0, 0.0));
    fwd.process(&mut hf);

    let scale = 1.0 / n_fft as f64;
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let usable = x.len().min(out_len);
    let mut start = 0;
    while start < usable {
        let end = (start + block).min(usable);
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(&x[start..end]) {
            b.re = v;
        }
        fwd.process(&mut buf);
        for (b, hv) in buf.iter_mut().zip(&hf) {
            *b *= hv;
        }
        inv.process(&mut buf);
        for (i, b) in buf.iter().enumerate() {
            let idx = start + i;
            if idx >= out_len {
                break;
            }
            y[idx] += b.re * scale;
        }
        start = end;
    }
    y
}

const DIRECT_MAX_TAPS: usize = 64;

/// Convolution truncated to the input length, choosing FFT for long IRs.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    if h.len() <= DIRECT_MAX_TAPS || x.len() <= DIRECT_MAX_TAPS {
        convolve_direct(x, h, x.len())
    } else {
        convolve_fft(x, h, x.len())
    }
}

/// Convolve with the IR, keep the input length and restore the input peak.
pub fn apply_reverb(audio: &AudioBuffer, ir: &ImpulseResponse) -> Result<AudioBuffer> {
    if audio.sample_rate_hz() != ir.ir.sample_rate_hz() {
        return Err(Error::RateMismatch { left: audio.sample_rate_hz(), right: ir.ir.sample_rate_hz() });
    }
    let wet = AudioBuffer::from_parts(convolve_truncated(audio.samples(), ir.ir.samples()), audio.sample_rate_hz());
    let (in_peak, out_peak) = (audio.peak(), wet.peak());
    if out_peak == 0.0 {
        return Ok(wet);
    }
    Ok(wet.scaled(in_peak / out_peak))
}
