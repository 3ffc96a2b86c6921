//! Multi-system fusion over CTM inputs, calibration training, and scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fusion::{
    apply_calibration, build_wtn, compute_nce, train_calibration, vote, CalibrationExample, CalibrationModel, CtmMap,
    HypothesisWord, UtteranceId, VoteConfig,
};
use crate::scoring::{align_and_count, hypothesis_correctness, ErrorCounts, Normalizer, References, WerReport};

/// How calibration models map onto systems.
#[derive(Debug, Clone, Default)]
pub enum Calibration {
    #[default]
    None,
    /// One model for every system.
    Pooled(CalibrationModel),
    /// One model per system, in system order.
    PerSystem(Vec<CalibrationModel>),
}

impl Calibration {
    fn model_for(&self, system: usize) -> Result<Option<&CalibrationModel>> {
        match self {
            Calibration::None => Ok(None),
            Calibration::Pooled(m) => Ok(Some(m)),
            Calibration::PerSystem(ms) => ms
                .get(system)
                .map(Some)
                .ok_or_else(|| Error::InvalidParameter(format!("no calibration model for system {system}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FuseOptions {
    pub vote: VoteConfig,
    pub calibration: Calibration,
    pub normalizer: Normalizer,
    /// Utterance-level LM scores for words without their own.
    pub utterance_lm: BTreeMap<UtteranceId, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SystemScore {
    pub counts: WerReport,
    pub nce_raw: Option<f64>,
    pub nce_calibrated: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct FuseReport {
    pub systems: Vec<SystemScore>,
    pub fused: WerReport,
    pub fused_nce: Option<f64>,
    /// Utterances missing from at least one system.
    pub skipped: Vec<UtteranceId>,
    /// Utterances without a reference.
    pub unscored: Vec<UtteranceId>,
}

#[derive(Debug, Clone, Default)]
pub struct FuseOutput {
    pub fused: CtmMap,
    pub report: Option<FuseReport>,
    pub skipped: Vec<UtteranceId>,
}

fn lm_for(opts: &FuseOptions, id: &UtteranceId) -> Option<f64> {
    opts.utterance_lm.get(id).or_else(|| opts.utterance_lm.get(&UtteranceId::any_channel(&id.recording))).copied()
}

fn prepare(words: &[HypothesisWord], opts: &FuseOptions, id: &UtteranceId) -> Vec<HypothesisWord> {
    let mut w = words.to_vec();
    if let Some(s) = lm_for(opts, id) {
        crate::fusion::broadcast_lm_score(&mut w, s);
    }
    w
}

/// Normalized hypothesis tokens with their source word indices.
fn normalized_with_index(words: &[HypothesisWord], norm: &Normalizer) -> (Vec<String>, Vec<usize>) {
    let mut toks = Vec::new();
    let mut idx = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if let Some(t) = norm.normalize(&[w.word.as_str()]).pop() {
            toks.push(t);
            idx.push(i);
        }
    }
    (toks, idx)
}

/// Calibration examples for one utterance: each surviving hypothesis word
/// labelled correct when alignment marks it so.
pub fn label_words(reference: &[String], words: &[HypothesisWord], norm: &Normalizer) -> Vec<CalibrationExample> {
    let r = norm.normalize(reference);
    let (h, idx) = normalized_with_index(words, norm);
    hypothesis_correctness(&r, &h)
        .into_iter()
        .zip(idx)
        .map(|(ok, i)| CalibrationExample {
            confidence: words[i].confidence,
            lm_score: words[i].lm_score.unwrap_or(0.0),
            correct: ok,
        })
        .collect()
}

fn score_words(reference: &[String], words: &[HypothesisWord], norm: &Normalizer) -> ErrorCounts {
    let (h, _) = normalized_with_index(words, norm);
    align_and_count(&norm.normalize(reference), &h)
}

fn nce_of(examples: &[CalibrationExample], conf: impl Fn(&CalibrationExample) -> f64) -> Option<f64> {
    let pairs: Vec<(f64, bool)> = examples.iter().map(|e| (conf(e), e.correct)).collect();
    compute_nce(&pairs).ok()
}

/// Utterances present in every system; the rest are reported and skipped.
fn common_utterances(systems: &[CtmMap]) -> (Vec<UtteranceId>, Vec<UtteranceId>) {
    let all: BTreeSet<&UtteranceId> = systems.iter().flat_map(|s| s.keys()).collect();
    let mut common = Vec::new();
    let mut skipped = Vec::new();
    for id in all {
        if systems.iter().all(|s| s.contains_key(id)) {
            common.push(id.clone());
        } else {
            let e = Error::UtteranceMismatch(id.to_string());
            log::warn!("{e}; skipped");
            skipped.push(id.clone());
        }
    }
    (common, skipped)
}

/// Per utterance: optional calibration of each system, alignment, voting.
/// With references, also per-system and fused WER plus NCE.
pub fn run_fuse(systems: &[CtmMap], opts: &FuseOptions, references: Option<&References>) -> Result<FuseOutput> {
    if systems.is_empty() {
        return Err(Error::InvalidParameter("fusion needs at least one system".into()));
    }
    opts.vote.validate()?;
    let (common, skipped) = common_utterances(systems);
    let mut fused = CtmMap::new();
    let mut report = references.map(|_| FuseReport {
        systems: vec![SystemScore::default(); systems.len()],
        skipped: skipped.clone(),
        ..Default::default()
    });
    let mut raw_examples: Vec<Vec<CalibrationExample>> = vec![Vec::new(); systems.len()];
    let mut cal_examples: Vec<Vec<CalibrationExample>> = vec![Vec::new(); systems.len()];
    let mut fused_examples = Vec::new();

    for id in &common {
        let mut inputs = Vec::with_capacity(systems.len());
        let mut raw_inputs = Vec::with_capacity(systems.len());
        for (k, s) in systems.iter().enumerate() {
            let raw = prepare(&s[id], opts, id);
            let calibrated = match opts.calibration.model_for(k)? {
                Some(m) => apply_calibration(m, &raw),
                None => raw.clone(),
            };
            raw_inputs.push(raw);
            inputs.push(calibrated);
        }
        let out = vote(&build_wtn(&inputs), &opts.vote);

        if let (Some(rep), Some(refs)) = (report.as_mut(), references) {
            match refs.get(id) {
                Some(r) => {
                    let r = r.to_vec();
                    for k in 0..systems.len() {
                        rep.systems[k].counts.push(id.clone(), score_words(&r, &raw_inputs[k], &opts.normalizer));
                        let raw_ex = label_words(&r, &raw_inputs[k], &opts.normalizer);
                        let cal_conf = label_words(&r, &inputs[k], &opts.normalizer);
                        raw_examples[k].extend(raw_ex);
                        cal_examples[k].extend(cal_conf);
                    }
                    rep.fused.push(id.clone(), score_words(&r, &out, &opts.normalizer));
                    fused_examples.extend(label_words(&r, &out, &opts.normalizer));
                }
                None => rep.unscored.push(id.clone()),
            }
        }
        fused.insert(id.clone(), out);
    }

    if let Some(rep) = report.as_mut() {
        for k in 0..systems.len() {
            rep.systems[k].nce_raw = nce_of(&raw_examples[k], |e| e.confidence);
            if !matches!(opts.calibration, Calibration::None) {
                rep.systems[k].nce_calibrated = nce_of(&cal_examples[k], |e| e.confidence);
            }
        }
        rep.fused_nce = nce_of(&fused_examples, |e| e.confidence);
    }
    Ok(FuseOutput { fused, report, skipped })
}

/// Labelled examples from every system against the references.
pub fn collect_examples(
    systems: &[CtmMap],
    references: &References,
    opts: &FuseOptions,
) -> Vec<Vec<CalibrationExample>> {
    systems
        .iter()
        .map(|s| {
            let mut ex = Vec::new();
            for (id, words) in s {
                if let Some(r) = references.get(id) {
                    ex.extend(label_words(r, &prepare(words, opts, id), &opts.normalizer));
                }
            }
            ex
        })
        .collect()
}

/// Train one pooled model, or one per system.
pub fn train_from_ctms(
    systems: &[CtmMap],
    references: &References,
    opts: &FuseOptions,
    lambda: f64,
    per_system: bool,
) -> Result<Calibration> {
    let per = collect_examples(systems, references, opts);
    if per_system {
        Ok(Calibration::PerSystem(per.iter().map(|ex| train_calibration(ex, lambda)).collect::<Result<_>>()?))
    } else {
        let pooled: Vec<CalibrationExample> = per.into_iter().flatten().collect();
        Ok(Calibration::Pooled(train_calibration(&pooled, lambda)?))
    }
}

/// Score one hypothesis set against references.
pub fn score_ctm(hyp: &CtmMap, references: &References, norm: &Normalizer) -> Result<WerReport> {
    let mut rep = WerReport::default();
    let mut seen = BTreeSet::new();
    for (id, words) in hyp {
        if let Some(r) = references.get(id) {
            rep.push(id.clone(), score_words(r, words, norm));
            seen.insert(id.clone());
        } else {
            log::warn!("no reference for {id}");
        }
    }
    // references with no hypothesis count as all deletions
    for (id, r) in references.iter() {
        let covered = seen.iter().any(|s| s == id || (id.channel == UtteranceId::ANY_CHANNEL && s.recording == id.recording));
        if !covered {
            rep.push(id.clone(), align_and_count(&norm.normalize(r), &Vec::<String>::new()));
        }
    }
    rep.wer_percent()?;
    Ok(rep)
}

fn opt_nce(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

pub fn format_fuse_report(rep: &FuseReport, names: &[String]) -> String {
    let mut out = String::new();
    let wer = |r: &WerReport| r.wer_percent().map_or_else(|_| "n/a".to_string(), |w| format!("{w:.2}"));
    let _ = writeln!(out, "{:<24} {:>8} {:>10} {:>10}", "system", "wer%", "nce_raw", "nce_cal");
    for (k, s) in rep.systems.iter().enumerate() {
        let name = names.get(k).cloned().unwrap_or_else(|| format!("system{k}"));
        let _ = writeln!(out, "{:<24} {:>8} {:>10} {:>10}", name, wer(&s.counts), opt_nce(s.nce_raw), opt_nce(s.nce_calibrated));
    }
    let _ = writeln!(out, "{:<24} {:>8} {:>10} {:>10}", "fused", wer(&rep.fused), opt_nce(rep.fused_nce), "-");
    if !rep.skipped.is_empty() {
        let _ = writeln!(out, "skipped (utterance mismatch): {}", rep.skipped.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "));
    }
    if !rep.unscored.is_empty() {
        let _ = writeln!(out, "unscored (no reference): {}", rep.unscored.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "));
    }
    out
}
