//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pscaug::audio::{read_wav, AudioBuffer};
use pscaug::channel::highpass;
use pscaug::codec::g711::{alaw_decode, alaw_encode, mulaw_decode, mulaw_encode};
use pscaug::codec::{drop_frames, frame_len, CodecKind, CodecSpec};
use pscaug::fusion::calibration::loss_and_gradient;
use pscaug::fusion::wtn::build_wtn_from_words;
use pscaug::fusion::{build_wtn, compute_nce, vote, CalibrationExample, CtmMap, HypothesisWord, UtteranceId, VoteConfig};
use pscaug::noise::{mix_at_snr, NoiseEvent, SnrBand};
use pscaug::pipeline::fuse::train_from_ctms;
use pscaug::pipeline::{run_augment, run_fuse, FuseOptions, RECORDS_FILE};
use pscaug::reverb::{build_ir_pool, convolve_direct, convolve_fft, estimate_rt60, ImpulseResponse, IrPool};
use pscaug::scoring::{align, align_and_count, AlignOp, References, COST_DELETION, COST_INSERTION, COST_SUBSTITUTION};
use pscaug::synth::{exponential_ir, noise_clip, speech_like, write_toy_corpus};

type Outcome = (bool, String);

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let (ok, detail) = f();
    let el = t.elapsed();
    match limit {
        Some(l) if el > l => (false, format!("{detail}; took {:.1}s, limit {:.0}s", el.as_secs_f64(), l.as_secs_f64())),
        _ => (ok, format!("{detail} ({:.1}s)", el.as_secs_f64())),
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn snr_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bands = [SnrBand::low(), SnrBand::mid()];
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let band = &bands[i % 2];
        let speech = speech_like(rng.gen_range(0.5..1.5), 8000, rng.gen());
        let noise = noise_clip(rng.gen_range(0.3..2.0), 8000, rng.gen_range(0.0..0.95), rng.gen());
        let target = rng.gen_range(band.low_db..=band.high_db);
        let ev = NoiseEvent { clip_id: "n".into(), start_offset_s: rng.gen_range(0.0..0.3), snr_db: target };
        let m = mix_at_snr(&speech, &noise, &ev).unwrap();
        let residual: Vec<f64> =
            m.audio.samples().iter().zip(speech.samples()).map(|(y, s)| y / m.overflow_scale - s).collect();
        let measured = 10.0 * (power(speech.samples()) / power(&residual)).log10();
        worst = worst.max((measured - target).abs());
    }
    (worst <= 0.01, format!("max |measured - target| = {worst:.2e} dB over 1000 mixes"))
}

/// Reconstruction values written out from the G.711 segment tables.
fn itu_mulaw(code: u8) -> i16 {
    let u = !code;
    let (e, m) = ((u >> 4) & 7, u & 15);
    let mag = 4 * (((2 * m as i32 + 33) << e) - 33);
    (if u & 0x80 != 0 { -mag } else { mag }) as i16
}

fn itu_alaw(code: u8) -> i16 {
    let a = code ^ 0x55;
    let (e, m) = ((a >> 4) & 7, a & 15);
    let mag = 8 * if e == 0 { 2 * m as i32 + 1 } else { (2 * m as i32 + 33) << (e - 1) };
    (if a & 0x80 != 0 { mag } else { -mag }) as i16
}

fn g711_conformance() -> Outcome {
    let mut table_bad = 0;
    for c in 0..=255u8 {
        table_bad += usize::from(mulaw_decode(c) != itu_mulaw(c)) + usize::from(alaw_decode(c) != itu_alaw(c));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bound_bad = 0;
    for _ in 0..1_000_000 {
        let x: i16 = rng.gen();
        let mu = mulaw_encode(x);
        let step_mu = 8i32 << ((!mu >> 4) & 7);
        bound_bad += usize::from((x as i32 - mulaw_decode(mu) as i32).abs() > step_mu);
        let a = alaw_encode(x);
        let e = ((a ^ 0x55) >> 4) & 7;
        let step_a = if e == 0 { 16 } else { 16i32 << (e - 1) };
        bound_bad += usize::from((x as i32 - alaw_decode(a) as i32).abs() > step_a);
    }
    (
        table_bad == 0 && bound_bad == 0,
        format!("{table_bad} table mismatches over 512 codes, {bound_bad} step-bound violations over 10^6 samples per law"),
    )
}

fn rt60_estimator() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let truths = [0.1, 0.3, 0.5, 0.8];
    let mut manifest = String::new();
    let mut worst = 0.0f64;
    let mut estimates = Vec::new();
    for (i, t) in truths.iter().enumerate() {
        let ir = exponential_ir(*t, 16000, 10 + i as u64);
        let est = estimate_rt60(&ir).unwrap();
        worst = worst.max((est - t).abs() / t);
        estimates.push(est);
        let p = dir.path().join(format!("t{i}.wav"));
        pscaug::audio::write_wav(&ir, &p).unwrap();
        manifest.push_str(&format!("ir{i}\t{}\n", p.display()));
    }
    let mpath = dir.path().join("irs.tsv");
    std::fs::write(&mpath, manifest).unwrap();
    let (pool, _) = build_ir_pool(&mpath, 0.5, 16000).unwrap();
    let mut kept: Vec<&str> = pool.entries().iter().map(|e| e.source_id.as_str()).collect();
    kept.sort();
    // the boundary itself is excluded
    let exact: Vec<ImpulseResponse> = truths
        .iter()
        .map(|&t| ImpulseResponse { ir: AudioBuffer::zeros(1, 16000), rt60_s: t, source_id: format!("{t}") })
        .collect();
    let (exact_pool, _) = IrPool::new(exact, 0.5);
    let exact_kept: Vec<f64> = exact_pool.entries().iter().map(|e| e.rt60_s).collect();
    let ok = worst <= 0.10 && kept == ["ir0", "ir1"] && exact_kept == [0.1, 0.3];
    (
        ok,
        format!(
            "estimates {:?}, max rel error {:.1}%, pool keeps {:?}, exact-boundary pool keeps {:?}",
            estimates.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>(),
            100.0 * worst,
            kept,
            exact_kept
        ),
    )
}

fn convolution_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..rng.gen_range(1..6000)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..rng.gen_range(1..3000)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = x.len() + h.len() - 1;
        let a = convolve_fft(&x, &h, n);
        // direct sum written out independently
        for (k, v) in a.iter().enumerate() {
            let lo = k.saturating_sub(h.len() - 1);
            let hi = k.min(x.len() - 1);
            let d: f64 = (lo..=hi).map(|i| x[i] * h[k - i]).sum();
            worst = worst.max((v - d).abs());
        }
        let b = convolve_direct(&x, &h, n);
        worst = worst.max(a.iter().zip(&b).fold(0.0, |m, (p, q)| m.max((p - q).abs())));
    }
    (worst <= 1e-6, format!("max |fft - direct| = {worst:.2e} over 100 pairs"))
}

fn tone_gain_db(freq: f64, cutoff: f64, rate: u32) -> f64 {
    let n = rate as usize * 2;
    let x: Vec<f64> = (0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()).collect();
    let y = highpass(&AudioBuffer::new(x.clone(), rate).unwrap(), cutoff).unwrap();
    let tail = n / 2;
    10.0 * (power(&y.samples()[tail..]) / power(&x[tail..])).log10()
}

fn filter_spec() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for rate in [8000u32, 16000] {
        for fc in [300.0, 600.0, 1000.0, 1500.0] {
            let at = -tone_gain_db(fc, fc, rate);
            let quarter = -tone_gain_db(fc / 4.0, fc, rate);
            ok &= (at - 3.0).abs() <= 0.5 && quarter > 20.0;
            parts.push(format!("{}k/{fc}: {at:.2}/{quarter:.1}", rate / 1000));
        }
    }
    (ok, format!("attenuation dB at fc / fc/4: {}", parts.join(", ")))
}

fn frame_drops() -> Outcome {
    let rate = 8000;
    let mut spec = CodecSpec::new(CodecKind::G711Mu);
    spec.drop_rate = 0.06;
    let fl = frame_len(spec.frame_ms, rate);
    let frames = 20_000;
    let x: Vec<f64> = (0..fl * frames).map(|i| 0.1 + 0.5 * ((i as f64) * 0.01).sin().abs()).collect();
    let buf = AudioBuffer::new(x.clone(), rate).unwrap();
    let y = drop_frames(&buf, &spec, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let mut dropped = 0;
    let mut partial = 0;
    for f in 0..frames {
        let seg = &y.samples()[f * fl..(f + 1) * fl];
        if seg.iter().all(|v| *v == 0.0) {
            dropped += 1;
        } else if seg != &x[f * fl..(f + 1) * fl] {
            partial += 1;
        }
    }
    let frac = dropped as f64 / frames as f64;
    ((frac - 0.06).abs() <= 0.01 && partial == 0, format!("drop fraction {frac:.4} over {frames} frames, {partial} partially altered frames"))
}

fn all_sequences(max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out: Vec<Vec<&str>> = vec![vec![]];
    let mut frontier = out.clone();
    for _ in 0..max_len {
        let next: Vec<Vec<&str>> = frontier
            .iter()
            .flat_map(|s| ["a", "b", "c"].iter().map(move |c| s.iter().copied().chain([*c]).collect()))
            .collect();
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Cost of one multiple-alignment column from its definition.
fn column_cost(col: &[Option<&str>]) -> u32 {
    (1..col.len())
        .map(|k| {
            let earlier: Vec<&str> = col[..k].iter().flatten().copied().collect();
            match col[k] {
                Some(w) => u32::from(earlier.is_empty() || !earlier.contains(&w)),
                None => u32::from(!earlier.is_empty()),
            }
        })
        .sum()
}

fn remaining_lower_bound(systems: &[Vec<&str>], pos: &[usize]) -> u32 {
    let rem: Vec<usize> = systems.iter().zip(pos).map(|(s, p)| s.len() - p).collect();
    (1..rem.len())
        .map(|k| {
            let sum: usize = rem[..k].iter().sum();
            let max = *rem[..k].iter().max().unwrap();
            (rem[k].saturating_sub(sum) + max.saturating_sub(rem[k])) as u32
        })
        .sum()
}

/// True when some multiple alignment costs less than `bound`.
fn cheaper_alignment_exists(systems: &[Vec<&str>], pos: &mut Vec<usize>, acc: u32, bound: u32) -> bool {
    if acc + remaining_lower_bound(systems, pos) >= bound {
        return false;
    }
    let n = systems.len();
    if (0..n).all(|k| pos[k] == systems[k].len()) {
        return true;
    }
    for m in 1..1u32 << n {
        if (0..n).any(|k| m & (1 << k) != 0 && pos[k] == systems[k].len()) {
            continue;
        }
        let col: Vec<Option<&str>> = (0..n).map(|k| (m & (1 << k) != 0).then(|| systems[k][pos[k]])).collect();
        let c = column_cost(&col);
        (0..n).filter(|k| m & (1 << k) != 0).for_each(|k| pos[k] += 1);
        let found = cheaper_alignment_exists(systems, pos, acc + c, bound);
        (0..n).filter(|k| m & (1 << k) != 0).for_each(|k| pos[k] -= 1);
        if found {
            return true;
        }
    }
    false
}

/// The network is a valid multiple alignment, its reported cost matches its
/// columns, and nothing cheaper exists.
fn wtn_is_optimal(systems: &[Vec<&str>]) -> bool {
    let net = build_wtn_from_words(systems);
    let valid = systems.iter().enumerate().all(|(k, s)| net.system_words(k) == *s)
        && net.slots.iter().all(|sl| sl.entries.len() == systems.len() && sl.entries.iter().any(Option::is_some));
    let cost: u32 = net
        .slots
        .iter()
        .map(|sl| column_cost(&sl.entries.iter().map(|e| e.as_ref().map(|e| e.word.as_str())).collect::<Vec<_>>()))
        .sum();
    valid && cost == net.total_cost() && !cheaper_alignment_exists(systems, &mut vec![0; systems.len()], 0, cost)
}

fn rover_oracle() -> Outcome {
    let upto5 = all_sequences(5);
    let upto3 = all_sequences(3);
    let mut bad = 0usize;
    let mut checked = 0usize;
    let mut identity_bad = 0usize;
    for s in &upto5 {
        let out: Vec<String> = vote(&build_wtn_from_words(&[s.clone()]), &VoteConfig::default()).into_iter().map(|w| w.word).collect();
        identity_bad += usize::from(out != *s);
        bad += usize::from(!wtn_is_optimal(&[s.clone()]));
        checked += 1;
    }
    for a in &upto5 {
        for b in &upto5 {
            bad += usize::from(!wtn_is_optimal(&[a.clone(), b.clone()]));
            checked += 1;
        }
    }
    for a in &upto3 {
        for b in &upto3 {
            for c in &upto3 {
                bad += usize::from(!wtn_is_optimal(&[a.clone(), b.clone(), c.clone()]));
                checked += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let long: Vec<&Vec<&str>> = upto5.iter().filter(|s| s.len() >= 4).collect();
    for i in 0..20_000 {
        // half the samples use three sequences of 4-5 words
        let pick = |rng: &mut ChaCha8Rng| if i % 2 == 0 { (*long.choose(rng).unwrap()).clone() } else { upto5.choose(rng).unwrap().clone() };
        let sys = [pick(&mut rng), pick(&mut rng), pick(&mut rng)];
        bad += usize::from(!wtn_is_optimal(&sys));
        checked += 1;
    }
    (
        bad == 0 && identity_bad == 0,
        format!(
            "{bad} non-optimal of {checked} sets (all 1-2 systems x <=5 words, all 3 x <=3 words, 20000 sampled 3 x <=5 words); {identity_bad} single-system identity failures"
        ),
    )
}

struct Corrupted {
    words: Vec<HypothesisWord>,
}

fn corrupt(reference: &[usize], vocab: usize, rng: &mut ChaCha8Rng) -> Corrupted {
    let mut words = Vec::new();
    for (i, &w) in reference.iter().enumerate() {
        let t = 0.5 * i as f64;
        let conf = |rng: &mut ChaCha8Rng| rng.gen_range(0.6..0.9);
        if rng.gen::<f64>() < 0.2 {
            match rng.gen_range(0..3) {
                0 => {
                    let mut s = rng.gen_range(0..vocab);
                    while s == w {
                        s = rng.gen_range(0..vocab);
                    }
                    words.push(HypothesisWord::new(format!("w{s}"), t, 0.4, conf(rng)));
                }
                1 => {}
                _ => {
                    words.push(HypothesisWord::new(format!("w{w}"), t, 0.4, conf(rng)));
                    words.push(HypothesisWord::new(format!("w{}", rng.gen_range(0..vocab)), t + 0.42, 0.06, conf(rng)));
                }
            }
        } else {
            words.push(HypothesisWord::new(format!("w{w}"), t, 0.4, conf(rng)));
        }
    }
    Corrupted { words }
}

fn fusion_gain() -> Outcome {
    let (utts, len, vocab) = (1000, 10, 1000);
    let mut wins = 0;
    let mut margins = Vec::new();
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let mut sys_err = [0usize; 3];
        let mut fused_err = 0usize;
        for _ in 0..utts {
            let reference: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
            let ref_words: Vec<String> = reference.iter().map(|w| format!("w{w}")).collect();
            let systems: Vec<Vec<HypothesisWord>> = (0..3).map(|_| corrupt(&reference, vocab, &mut rng).words).collect();
            for (k, s) in systems.iter().enumerate() {
                let h: Vec<&str> = s.iter().map(|w| w.word.as_str()).collect();
                sys_err[k] += align_and_count(&ref_words, &h).errors();
            }
            let fused = vote(&build_wtn(&systems), &VoteConfig::default());
            let h: Vec<&str> = fused.iter().map(|w| w.word.as_str()).collect();
            fused_err += align_and_count(&ref_words, &h).errors();
        }
        let best = *sys_err.iter().min().unwrap();
        if fused_err < best {
            wins += 1;
        }
        margins.push((best as f64 - fused_err as f64) / (utts * len) as f64 * 100.0);
    }
    let mean_margin = margins.iter().sum::<f64>() / margins.len() as f64;
    (wins >= 95, format!("fused WER below best single system in {wins}/100 trials, mean gain {mean_margin:.2} WER points"))
}

fn overconfident_set(seed: u64, utts: usize) -> (Vec<CtmMap>, References) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut refs = References::default();
    let mut systems = vec![CtmMap::new(); 3];
    for u in 0..utts {
        let id = UtteranceId::new(format!("utt{u:04}"), "1");
        let reference: Vec<String> = (0..12).map(|_| format!("w{}", rng.gen_range(0..500))).collect();
        for (k, sys) in systems.iter_mut().enumerate() {
            // system k reports conf but is right with probability conf^(2+k)
            let words = reference
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let c: f64 = rng.gen_range(0.3..1.0);
                    let right = rng.gen::<f64>() < c.powi(2 + k as i32);
                    let word = if right { w.clone() } else { format!("x{}", rng.gen_range(0..500)) };
                    HypothesisWord::new(word, 0.5 * i as f64, 0.4, c)
                })
                .collect();
            sys.insert(id.clone(), words);
        }
        refs.insert(UtteranceId::any_channel(&id.recording), reference);
    }
    (systems, refs)
}

fn calibration() -> Outcome {
    let (train, train_refs) = overconfident_set(31, 300);
    let (test, test_refs) = overconfident_set(32, 300);
    let opts = FuseOptions::default();
    let cal = train_from_ctms(&train, &train_refs, &opts, 1e-3, false).unwrap();
    let out = run_fuse(&test, &FuseOptions { calibration: cal, ..Default::default() }, Some(&test_refs)).unwrap();
    let rep = out.report.unwrap();
    let nce: Vec<(f64, f64)> = rep.systems.iter().map(|s| (s.nce_raw.unwrap(), s.nce_calibrated.unwrap())).collect();
    let improved = nce.iter().all(|(raw, cal)| cal > raw);

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let examples: Vec<CalibrationExample> = (0..500)
        .map(|_| CalibrationExample {
            confidence: rng.gen_range(0.0..=1.0),
            lm_score: rng.gen_range(-5.0..5.0),
            correct: rng.gen(),
        })
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)];
        let lambda = rng.gen_range(0.0..0.1);
        let (_, g) = loss_and_gradient(&w, &examples, lambda);
        for i in 0..3 {
            let h = 1e-5;
            let (mut wp, mut wm) = (w, w);
            wp[i] += h;
            wm[i] -= h;
            let fd = (loss_and_gradient(&wp, &examples, lambda).0 - loss_and_gradient(&wm, &examples, lambda).0) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-12));
        }
    }
    (
        improved && worst <= 1e-6,
        format!(
            "held-out NCE raw->calibrated {}; gradient max rel error {worst:.2e}",
            nce.iter().map(|(r, c)| format!("{r:.3}->{c:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn nce_endpoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_prior = 0.0f64;
    let mut worst_perfect = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..500);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        labels[0] = true;
        labels[1] = false;
        let prior = labels.iter().filter(|l| **l).count() as f64 / n as f64;
        let at_prior: Vec<(f64, bool)> = labels.iter().map(|&l| (prior, l)).collect();
        worst_prior = worst_prior.max(compute_nce(&at_prior).unwrap().abs());
        let perfect: Vec<(f64, bool)> = labels.iter().map(|&l| (if l { 1.0 } else { 0.0 }, l)).collect();
        worst_perfect = worst_perfect.max((compute_nce(&perfect).unwrap() - 1.0).abs());
    }
    (
        worst_prior <= 1e-12 && worst_perfect <= 1e-12,
        format!("max |NCE| at prior {worst_prior:.1e}, max |NCE - 1| when perfect {worst_perfect:.1e}"),
    )
}

fn op_cost(op: &AlignOp) -> u32 {
    match op {
        AlignOp::Correct { .. } => 0,
        AlignOp::Substitution { .. } => COST_SUBSTITUTION,
        AlignOp::Insertion { .. } => COST_INSERTION,
        AlignOp::Deletion { .. } => COST_DELETION,
    }
}

/// True when an alignment of `r` and `h` costs less than `bound`.
fn cheaper_word_alignment(r: &[&str], h: &[&str], acc: u32, bound: u32) -> bool {
    let diff = r.len().abs_diff(h.len()) as u32 * COST_INSERTION.min(COST_DELETION);
    if acc + diff >= bound {
        return false;
    }
    match (r.split_first(), h.split_first()) {
        (None, None) => true,
        (Some(_), None) | (None, Some(_)) => true,
        (Some((a, rr)), Some((b, hh))) => {
            let sub = if a == b { 0 } else { COST_SUBSTITUTION };
            cheaper_word_alignment(rr, hh, acc + sub, bound)
                || cheaper_word_alignment(rr, h, acc + COST_DELETION, bound)
                || cheaper_word_alignment(r, hh, acc + COST_INSERTION, bound)
        }
    }
}

fn wer_oracle() -> Outcome {
    let seqs = all_sequences(6);
    let mut bad = 0usize;
    for r in &seqs {
        for h in &seqs {
            let ops = align(r, h);
            let ri: Vec<usize> = ops
                .iter()
                .filter_map(|o| match o {
                    AlignOp::Correct { r, .. } | AlignOp::Substitution { r, .. } | AlignOp::Deletion { r } => Some(*r),
                    AlignOp::Insertion { .. } => None,
                })
                .collect();
            let hi: Vec<usize> = ops
                .iter()
                .filter_map(|o| match o {
                    AlignOp::Correct { h, .. } | AlignOp::Substitution { h, .. } | AlignOp::Insertion { h } => Some(*h),
                    AlignOp::Deletion { .. } => None,
                })
                .collect();
            let consistent = ops.iter().all(|o| match o {
                AlignOp::Correct { r: i, h: j } => r[*i] == h[*j],
                AlignOp::Substitution { r: i, h: j } => r[*i] != h[*j],
                _ => true,
            });
            let cost: u32 = ops.iter().map(op_cost).sum();
            if ri != (0..r.len()).collect::<Vec<_>>() || hi != (0..h.len()).collect::<Vec<_>>() || !consistent || cheaper_word_alignment(r, h, 0, cost) {
                bad += 1;
            }
        }
    }
    let wer = align_and_count(&["a", "b", "c"], &["a", "x", "c", "d"]).wer_percent().unwrap();
    let shown = format!("{wer:.2}");
    (
        bad == 0 && shown == "66.67",
        format!("{bad} mismatches over {} pairs of length <= 6; \"a b c\" vs \"a x c d\" WER {shown}%", seqs.len() * seqs.len()),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let toy = write_toy_corpus(dir.path(), 20, 16000, 12).unwrap();
    let mut snaps = Vec::new();
    for workers in [1usize, 4, 8] {
        let mut cfg = toy.config.clone();
        cfg.workers = workers;
        cfg.output_dir = dir.path().join(format!("out{workers}"));
        let summary = run_augment(&cfg).unwrap();
        assert!(summary.success());
        snaps.push(snapshot(&cfg.output_dir));
    }
    let wavs = snaps[0].iter().filter(|(n, _)| n.ends_with(".wav")).count();
    let records = String::from_utf8_lossy(&snaps[0].iter().find(|(n, _)| n == RECORDS_FILE).unwrap().1).lines().count() - 1;
    let changed = snaps[0]
        .iter()
        .filter(|(n, _)| n.ends_with(".wav"))
        .filter(|(n, bytes)| {
            let input = read_wav(dir.path().join("audio").join(n)).unwrap();
            let _ = bytes;
            read_wav(dir.path().join("out1").join(n)).unwrap() != input
        })
        .count();
    let same = snaps.windows(2).all(|w| w[0] == w[1]);
    (
        same && wavs == 20 && changed == 20,
        format!("workers 1/4/8 identical: {same}; {wavs} wavs ({changed} altered by augmentation), {records} records"),
    )
}

fn main() {
    let criteria: Vec<(&str, Option<u64>, fn() -> Outcome)> = vec![
        ("SNR fidelity", Some(30), snr_fidelity),
        ("G.711 conformance", None, g711_conformance),
        ("RT60 estimator and pool filter", None, rt60_estimator),
        ("convolution oracle", None, convolution_oracle),
        ("high-pass filter spec", None, filter_spec),
        ("frame-drop statistics", None, frame_drops),
        ("ROVER alignment oracle", None, rover_oracle),
        ("fusion gain", Some(60), fusion_gain),
        ("calibration", None, calibration),
        ("NCE endpoints", None, nce_endpoints),
        ("WER oracle", None, wer_oracle),
        ("end-to-end determinism", Some(120), determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let (ok, detail) = catch_unwind(AssertUnwindSafe(|| timed(limit.map(Duration::from_secs), f)))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            });
        failed += usize::from(!ok);
        println!("criterion {:>2} {} {name}: {detail}", i + 1, if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
