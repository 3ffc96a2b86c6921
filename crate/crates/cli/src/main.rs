use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pscaug::audio::read_wav;
use pscaug::fusion::{format_ctm, parse_ctm, parse_utterance_scores, CalibrationModel, CtmMap, VoteConfig};
use pscaug::pipeline::fuse::{format_fuse_report, score_ctm, train_from_ctms};
use pscaug::pipeline::{run_augment, run_fuse, Calibration, FuseOptions, PipelineConfig};
use pscaug::reverb::{build_ir_pool, estimate_rt60, format_pool_report};
use pscaug::scoring::{format_wer_report, read_references, Normalizer};
use pscaug::vad::{detect_speech, format_chunk_manifest, format_segments, group_chunks, import_segments, VadConfig};

#[derive(Parser)]
#[command(name = "pscaug", version, about = "Radio-channel corpus degradation and ASR hypothesis fusion")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect speech segments in WAV files.
    Vad {
        wavs: Vec<PathBuf>,
    },
    /// Group speech segments into chunks.
    Chunk {
        wavs: Vec<PathBuf>,
        /// Use segments from this file instead of running detection.
        #[arg(long)]
        segments: Option<PathBuf>,
    },
    /// Estimate RT60 of impulse responses.
    Rt60 {
        irs: Vec<PathBuf>,
        /// Build the filtered pool from an IR manifest and print its report.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        max_rt60: f64,
    },
    /// Run the augmentation batch described by --config.
    Augment {
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        allow_drop_above_ceiling: bool,
    },
    /// Combine CTMs from several systems.
    Fuse {
        #[arg(required = true)]
        ctms: Vec<PathBuf>,
        #[command(flatten)]
        refs: RefArgs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        null_confidence: Option<f64>,
        /// Calibration model; repeat once per system for per-system models.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Utterance-level LM scores: `recording [channel] score` lines.
        #[arg(long)]
        lm_scores: Option<PathBuf>,
        /// Fused CTM destination (stdout when omitted).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train confidence calibration from CTMs and references.
    Calibrate {
        #[arg(required = true)]
        ctms: Vec<PathBuf>,
        #[command(flatten)]
        refs: RefArgs,
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
        #[arg(long)]
        lm_scores: Option<PathBuf>,
        /// Model file; with --per-system give one per CTM.
        #[arg(long = "out", short, required = true)]
        outs: Vec<PathBuf>,
        #[arg(long)]
        per_system: bool,
    },
    /// Word error rate of a CTM against references.
    Score {
        ctm: PathBuf,
        #[command(flatten)]
        refs: RefArgs,
    },
}

#[derive(Args)]
struct RefArgs {
    /// STM file, or plain `utterance words...` transcripts.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Tokens dropped from both sides before alignment.
    #[arg(long = "ignore")]
    ignore: Vec<String>,
    #[arg(long)]
    case_sensitive: bool,
}

impl RefArgs {
    fn normalizer(&self) -> Normalizer {
        Normalizer { case_fold: !self.case_sensitive, ..Default::default() }.with_ignored(&self.ignore)
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn vad_config(cli: &Cli) -> Result<VadConfig> {
    Ok(if cli.config.is_some() { load_config(cli)?.vad } else { VadConfig::default() })
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn read_ctms(paths: &[PathBuf]) -> Result<Vec<CtmMap>> {
    paths.iter().map(|p| parse_ctm(p).with_context(|| format!("reading {}", p.display()))).collect()
}

fn lm_scores(path: &Option<PathBuf>) -> Result<std::collections::BTreeMap<pscaug::fusion::UtteranceId, f64>> {
    match path {
        Some(p) => Ok(parse_utterance_scores(&std::fs::read_to_string(p)?, p)?),
        None => Ok(Default::default()),
    }
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Vad { wavs } => {
            let vad = vad_config(cli)?;
            let mut ok = true;
            for w in wavs {
                match read_wav(w).and_then(|a| detect_speech(&a, &vad)) {
                    Ok(segs) => print!("{}", format_segments(&stem(w), &segs)),
                    Err(e) => {
                        log::error!("{}: {e}", w.display());
                        ok = false;
                    }
                }
            }
            Ok(ok)
        }
        Command::Chunk { wavs, segments } => {
            let vad = vad_config(cli)?;
            let mut ok = true;
            if let Some(s) = segments {
                for (id, segs) in import_segments(s)? {
                    print!("{}", format_chunk_manifest(&id, &group_chunks(&segs, vad.min_chunk_s)));
                }
            }
            for w in wavs {
                match read_wav(w).and_then(|a| detect_speech(&a, &vad)) {
                    Ok(segs) => print!("{}", format_chunk_manifest(&stem(w), &group_chunks(&segs, vad.min_chunk_s))),
                    Err(e) => {
                        log::error!("{}: {e}", w.display());
                        ok = false;
                    }
                }
            }
            Ok(ok)
        }
        Command::Rt60 { irs, manifest, max_rt60 } => {
            let mut ok = true;
            for p in irs {
                match read_wav(p).and_then(|a| estimate_rt60(&a)) {
                    Ok(t) => println!("{}\t{t:.6}", stem(p)),
                    Err(e) => {
                        log::error!("{}: {e}", p.display());
                        ok = false;
                    }
                }
            }
            if let Some(m) = manifest {
                let rate = load_config(cli)?.sample_rate_hz;
                let (_, report) = build_ir_pool(m, *max_rt60, rate)?;
                print!("{}", format_pool_report(&report));
                ok &= report.iter().all(|r| r.rt60_s.is_some());
            }
            Ok(ok)
        }
        Command::Augment { output_dir, allow_drop_above_ceiling } => {
            if cli.config.is_none() {
                bail!("augment needs --config");
            }
            let mut cfg = load_config(cli)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d.clone();
            }
            if *allow_drop_above_ceiling {
                cfg.allow_drop_above_ceiling();
            }
            let summary = run_augment(&cfg)?;
            for (id, e) in &summary.failed {
                eprintln!("failed: {id}: {e}");
            }
            println!("{} recordings, {} chunks, {} failed", summary.outputs.len(), summary.records.len(), summary.failed.len());
            Ok(summary.success())
        }
        Command::Fuse { ctms, refs, alpha, null_confidence, models, lm_scores: lm, out } => {
            let systems = read_ctms(ctms)?;
            let mut vote = VoteConfig::default();
            if let Some(a) = alpha {
                vote.alpha = *a;
            }
            if let Some(c) = null_confidence {
                vote.null_confidence = *c;
            }
            vote.validate()?;
            let loaded: Vec<CalibrationModel> = models
                .iter()
                .map(|p| Ok(CalibrationModel::from_text(&std::fs::read_to_string(p)?)?))
                .collect::<Result<_>>()?;
            let calibration = match loaded.len() {
                0 => Calibration::None,
                1 => Calibration::Pooled(loaded.into_iter().next().unwrap()),
                n if n == systems.len() => Calibration::PerSystem(loaded),
                n => bail!("{n} models for {} systems", systems.len()),
            };
            let opts = FuseOptions { vote, calibration, normalizer: refs.normalizer(), utterance_lm: lm_scores(lm)? };
            let references = refs.reference.as_deref().map(read_references).transpose()?;
            let result = run_fuse(&systems, &opts, references.as_ref())?;
            let text = format_ctm(&result.fused);
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            if let Some(rep) = &result.report {
                let names: Vec<String> = ctms.iter().map(|p| stem(p)).collect();
                eprint!("{}", format_fuse_report(rep, &names));
            }
            for id in &result.skipped {
                log::warn!("skipped {id}: not present in every system");
            }
            Ok(true)
        }
        Command::Calibrate { ctms, refs, lambda, lm_scores: lm, outs, per_system } => {
            let Some(r) = &refs.reference else { bail!("calibrate needs --ref") };
            let references = read_references(r)?;
            let systems = read_ctms(ctms)?;
            let opts = FuseOptions { normalizer: refs.normalizer(), utterance_lm: lm_scores(lm)?, ..Default::default() };
            let models = match train_from_ctms(&systems, &references, &opts, *lambda, *per_system)? {
                Calibration::Pooled(m) => vec![m],
                Calibration::PerSystem(ms) => ms,
                Calibration::None => vec![],
            };
            if models.len() != outs.len() {
                bail!("{} models trained but {} output paths given", models.len(), outs.len());
            }
            for (m, p) in models.iter().zip(outs) {
                std::fs::write(p, m.to_text())?;
                println!("{}\t{:.6}\t{:.6}\t{:.6}", p.display(), m.intercept, m.w_conf, m.w_lm);
            }
            Ok(true)
        }
        Command::Score { ctm, refs } => {
            let Some(r) = &refs.reference else { bail!("score needs --ref") };
            let references = read_references(r)?;
            let rep = score_ctm(&parse_ctm(ctm)?, &references, &refs.normalizer())?;
            print!("{}", format_wer_report(&rep));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
