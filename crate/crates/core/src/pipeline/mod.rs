//! Config-driven batch augmentation and the fusion/scoring chain.

pub mod augment;
pub mod config;
pub mod fuse;
pub mod record;
pub mod seed;

pub use augment::{
    augment_recording, chunk_regions, plan_recording, read_corpus, render, replay_chunk, replay_records, run_augment,
    AugmentSummary, Resources, RECORDS_FILE,
};
pub use config::{PipelineConfig, StageLevel};
pub use fuse::{run_fuse, Calibration, FuseOptions, FuseOutput, FuseReport};
pub use record::{format_records, parse_records, read_records, AugmentationRecord};
pub use seed::{derive_seed, substream};
