use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed WAV file {path}: {reason}")]
    MalformedWav { path: PathBuf, reason: String },

    #[error("unsupported WAV encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },

    #[error("buffer is empty")]
    EmptyBuffer,

    #[error("buffer is silent (all samples zero)")]
    SilentInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("buffer of {samples} samples is shorter than one {frame}-sample frame")]
    BufferTooShort { samples: usize, frame: usize },

    #[error("{path}:{line}: malformed segment line: {reason}")]
    MalformedSegmentLine { path: PathBuf, line: usize, reason: String },

    #[error("overlapping segments for recording {recording}: ({a_start}, {a_end}) and ({b_start}, {b_end})")]
    OverlapError {
        recording: String,
        a_start: f64,
        a_end: f64,
        b_start: f64,
        b_end: f64,
    },

    #[error("energy decay curve never reaches -25 dB")]
    DecayTooShort,

    #[error("pool is empty: {0}")]
    EmptyPool(String),

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    RateMismatch { left: u32, right: u32 },

    #[error("noise class {0:?} has no configured weight")]
    UnknownClass(String),

    #[error("noise segment has zero power")]
    SilentNoise,

    #[error("cutoff {cutoff_hz} Hz is not below the Nyquist frequency {nyquist_hz} Hz")]
    CutoffAboveNyquist { cutoff_hz: f64, nyquist_hz: f64 },

    #[error("G.711 requires 8000 Hz audio, got {0} Hz")]
    WrongSampleRate(u32),

    #[error("external codec {stage} command failed with exit code {code:?}: {stderr}")]
    CodecCommandFailed {
        stage: &'static str,
        code: Option<i32>,
        stderr: String,
    },

    #[error("external codec output unreadable: {0}")]
    OutputUnreadable(String),

    #[error("{path}:{line}: malformed CTM line: {reason}")]
    MalformedCtmLine { path: PathBuf, line: usize, reason: String },

    #[error("{path}:{line}: malformed reference line: {reason}")]
    MalformedReferenceLine { path: PathBuf, line: usize, reason: String },

    #[error("no calibration examples")]
    EmptyTrainingSet,

    #[error("malformed calibration model: {0}")]
    MalformedModel(String),

    #[error("NCE undefined: all words are {0}")]
    DegenerateLabels(&'static str),

    #[error("reference contains no words")]
    EmptyReference,

    #[error("systems disagree on utterance inventory: {0}")]
    UtteranceMismatch(String),

    #[error("{path}:{line}: malformed manifest line: {reason}")]
    MalformedManifest { path: PathBuf, line: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),
}
