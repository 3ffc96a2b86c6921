//! Logistic-regression confidence calibration on (word confidence, LM
//! score), and normalized cross entropy.

use std::fmt::Write as _;

use super::HypothesisWord;
use crate::error::{Error, Result};

/// Confidence clamp before the logit transform.
pub const CONF_EPS: f64 = 1e-6;
/// Clamp applied inside NCE before taking logs.
pub const NCE_EPS: f64 = 1e-15;
/// Keeps predictions strictly inside (0, 1).
pub const PROB_EPS: f64 = 1e-12;
pub const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationExample {
    pub confidence: f64,
    pub lm_score: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationModel {
    pub intercept: f64,
    pub w_conf: f64,
    pub w_lm: f64,
    pub lambda: f64,
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn features(confidence: f64, lm_score: f64) -> [f64; 3] {
    [1.0, logit(confidence.clamp(CONF_EPS, 1.0 - CONF_EPS)), lm_score]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl CalibrationModel {
    pub fn zero(lambda: f64) -> Self {
        Self { intercept: 0.0, w_conf: 0.0, w_lm: 0.0, lambda }
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.intercept, self.w_conf, self.w_lm]
    }

    fn from_weights(w: [f64; 3], lambda: f64) -> Self {
        Self { intercept: w[0], w_conf: w[1], w_lm: w[2], lambda }
    }

    pub fn predict(&self, confidence: f64, lm_score: f64) -> f64 {
        sigmoid(dot(&self.weights(), &features(confidence, lm_score))).clamp(PROB_EPS, 1.0 - PROB_EPS)
    }

    pub fn is_finite(&self) -> bool {
        self.weights().iter().all(|w| w.is_finite()) && self.lambda.is_finite()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "intercept {}", self.intercept);
        let _ = writeln!(s, "w_conf {}", self.w_conf);
        let _ = writeln!(s, "w_lm {}", self.w_lm);
        let _ = writeln!(s, "lambda {}", self.lambda);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut vals: [Option<f64>; 4] = [None; 4];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (name, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::MalformedModel(format!("line `{line}` has no value")))?;
            let slot = match name {
                "intercept" => 0,
                "w_conf" => 1,
                "w_lm" => 2,
                "lambda" => 3,
                other => return Err(Error::MalformedModel(format!("unknown weight `{other}`"))),
            };
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::MalformedModel(format!("`{}` is not a number", value.trim())))?;
            vals[slot] = Some(v);
        }
        let get = |i: usize, name: &str| vals[i].ok_or_else(|| Error::MalformedModel(format!("missing {name}")));
        let m = Self {
            intercept: get(0, "intercept")?,
            w_conf: get(1, "w_conf")?,
            w_lm: get(2, "w_lm")?,
            lambda: vals[3].unwrap_or(0.0),
        };
        if !m.is_finite() {
            return Err(Error::MalformedModel("non-finite weight".into()));
        }
        Ok(m)
    }
}

/// Mean cross entropy plus lambda/2 times the squared norm of all weights,
/// with its gradient.
pub fn loss_and_gradient(w: &[f64; 3], examples: &[CalibrationExample], lambda: f64) -> (f64, [f64; 3]) {
    let n = examples.len().max(1) as f64;
    let mut loss = 0.0;
    let mut g = [0.0; 3];
    for e in examples {
        let x = features(e.confidence, e.lm_score);
        let z = dot(w, &x);
        loss += if e.correct { softplus(-z) } else { softplus(z) };
        let r = sigmoid(z) - if e.correct { 1.0 } else { 0.0 };
        for k in 0..3 {
            g[k] += r * x[k];
        }
    }
    loss /= n;
    for k in 0..3 {
        g[k] = g[k] / n + lambda * w[k];
    }
    loss += 0.5 * lambda * dot(w, w);
    (loss, g)
}

fn hessian(w: &[f64; 3], examples: &[CalibrationExample], lambda: f64, active: &[bool; 3]) -> [[f64; 3]; 3] {
    let n = examples.len().max(1) as f64;
    let mut h = [[0.0; 3]; 3];
    for e in examples {
        let x = features(e.confidence, e.lm_score);
        let p = sigmoid(dot(w, &x));
        let s = p * (1.0 - p);
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] += s * x[i] * x[j];
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] /= n;
            if !(active[i] && active[j]) {
                h[i][j] = if i == j { 1.0 } else { 0.0 };
            }
        }
        h[i][i] += lambda;
    }
    h
}

/// Gaussian elimination with partial pivoting; directions with a vanishing
/// pivot get a zero step.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    let scale = (0..3).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut skip = [false; 3];
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap_or(col);
        a.swap(col, piv);
        b.swap(col, piv);
        if a[col][col].abs() <= 1e-12 * scale {
            skip[col] = true;
            continue;
        }
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        if skip[r] {
            continue;
        }
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Damped Newton from zero weights until the gradient infinity-norm is
/// below [`GRAD_TOL`]. Single-label or constant-feature data yields an
/// intercept-only model.
pub fn train_calibration(examples: &[CalibrationExample], lambda: f64) -> Result<CalibrationModel> {
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda {lambda}")));
    }
    let n_pos = examples.iter().filter(|e| e.correct).count();
    let first = features(examples[0].confidence, examples[0].lm_score);
    let constant = examples.iter().all(|e| features(e.confidence, e.lm_score) == first);
    let single_label = n_pos == 0 || n_pos == examples.len();
    let active = if single_label || constant {
        log::warn!("calibration data is degenerate; fitting an intercept-only model");
        [true, false, false]
    } else {
        [true, true, true]
    };

    if single_label && lambda == 0.0 {
        let prior = (n_pos as f64 / examples.len() as f64).clamp(CONF_EPS, 1.0 - CONF_EPS);
        return Ok(CalibrationModel::from_weights([logit(prior), 0.0, 0.0], lambda));
    }

    let mut w = [0.0; 3];
    let (mut loss, mut g) = loss_and_gradient(&w, examples, lambda);
    for _ in 0..MAX_ITER {
        for k in 0..3 {
            if !active[k] {
                g[k] = 0.0;
            }
        }
        if g.iter().all(|v| v.abs() < GRAD_TOL) {
            return Ok(CalibrationModel::from_weights(w, lambda));
        }
        let h = hessian(&w, examples, lambda, &active);
        let step = solve3(h, g);
        let mut t = 1.0;
        loop {
            let cand = [w[0] - t * step[0], w[1] - t * step[1], w[2] - t * step[2]];
            let (l, cg) = loss_and_gradient(&cand, examples, lambda);
            if l <= loss || t < 1e-10 {
                w = cand;
                loss = l;
                g = cg;
                break;
            }
            t *= 0.5;
        }
    }
    log::warn!("calibration stopped after {MAX_ITER} iterations without reaching tolerance");
    Ok(CalibrationModel::from_weights(w, lambda))
}

/// Replace each confidence by the model's prediction. Missing LM scores count as 0.
pub fn apply_calibration(model: &CalibrationModel, words: &[HypothesisWord]) -> Vec<HypothesisWord> {
    words
        .iter()
        .map(|w| HypothesisWord { confidence: model.predict(w.confidence, w.lm_score.unwrap_or(0.0)), ..w.clone() })
        .collect()
}

/// Normalized cross entropy with base-2 logs and the prior entropy as
/// normalizer.
pub fn compute_nce(pairs: &[(f64, bool)]) -> Result<f64> {
    let n = pairs.len();
    let n_c = pairs.iter().filter(|p| p.1).count();
    if n == 0 {
        return Err(Error::DegenerateLabels("no words"));
    }
    if n_c == 0 {
        return Err(Error::DegenerateLabels("all words incorrect"));
    }
    if n_c == n {
        return Err(Error::DegenerateLabels("all words correct"));
    }
    let p = n_c as f64 / n as f64;
    let h_max = -p * p.log2() - (1.0 - p) * (1.0 - p).log2();
    let h = -pairs
        .iter()
        .map(|&(c, ok)| {
            let c = c.clamp(NCE_EPS, 1.0 - NCE_EPS);
            if ok {
                c.log2()
            } else {
                (1.0 - c).log2()
            }
        })
        .sum::<f64>()
        / n as f64;
    Ok((h_max - h) / h_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex(confidence: f64, lm_score: f64, correct: bool) -> CalibrationExample {
        CalibrationExample { confidence, lm_score, correct }
    }

    fn random_set(seed: u64, n: usize) -> Vec<CalibrationExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c: f64 = rng.gen_range(0.01..0.99);
                let lm: f64 = rng.gen_range(-5.0..0.0);
                ex(c, lm, rng.gen::<f64>() < c * c)
            })
            .collect()
    }

    #[test]
    fn nce_known_value() {
        let v = compute_nce(&[(0.9, true), (0.8, true), (0.7, true), (0.2, false)]).unwrap();
        assert!((v - 0.5961827342123951).abs() < 1e-12);
    }

    #[test]
    fn nce_endpoints() {
        let pairs: Vec<(f64, bool)> = (0..10).map(|i| (0.3, i < 3)).collect();
        assert!(compute_nce(&pairs).unwrap().abs() < 1e-12);
        let perfect: Vec<(f64, bool)> = (0..10).map(|i| (if i < 3 { 1.0 } else { 0.0 }, i < 3)).collect();
        assert!((compute_nce(&perfect).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(compute_nce(&[(0.5, true)]), Err(Error::DegenerateLabels(_))));
        assert!(matches!(compute_nce(&[(0.5, false)]), Err(Error::DegenerateLabels(_))));
        assert!(matches!(compute_nce(&[]), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = CalibrationModel::zero(0.0);
        assert_eq!(m.predict(0.93, -4.0), 0.5);
        let words = vec![HypothesisWord::new("a", 1.0, 0.2, 0.1)];
        let out = apply_calibration(&m, &words);
        assert_eq!(out[0].confidence, 0.5);
        assert_eq!((out[0].word.as_str(), out[0].start_s, out[0].dur_s), ("a", 1.0, 0.2));
    }

    #[test]
    fn identity_model() {
        let m = CalibrationModel { intercept: 0.0, w_conf: 1.0, w_lm: 0.0, lambda: 0.0 };
        for c in [0.01, 0.2, 0.5, 0.77, 0.999] {
            assert!((m.predict(c, 3.0) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn all_correct_gives_intercept_only() {
        let data: Vec<_> = (0..20).map(|i| ex(0.05 * i as f64, -1.0, true)).collect();
        let m = train_calibration(&data, 0.1).unwrap();
        assert_eq!((m.w_conf, m.w_lm), (0.0, 0.0));
        let p = m.predict(0.5, 0.0);
        assert!(p > 0.5 && p < 1.0);
        // stationarity of mean CE + lambda/2 w0^2: sigmoid(w0) - 1 + lambda w0 = 0
        assert!((sigmoid(m.intercept) - 1.0 + 0.1 * m.intercept).abs() < 1e-8);
        let weaker = train_calibration(&data, 0.001).unwrap();
        assert!(weaker.predict(0.5, 0.0) > p);
        let unreg = train_calibration(&data, 0.0).unwrap();
        assert!((unreg.predict(0.5, 0.0) - (1.0 - CONF_EPS)).abs() < 1e-9);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(train_calibration(&[], 0.1), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn separable_set_is_fit() {
        let data: Vec<_> = (0..40)
            .map(|i| {
                let c = 0.05 + 0.0225 * i as f64;
                ex(c, -2.0 + 0.01 * i as f64, c > 0.5)
            })
            .collect();
        let m = train_calibration(&data, 0.001).unwrap();
        let acc = data.iter().filter(|e| (m.predict(e.confidence, e.lm_score) > 0.5) == e.correct).count();
        assert_eq!(acc, data.len());
        let (_, g) = loss_and_gradient(&m.weights(), &data, 0.001);
        assert!(g.iter().all(|v| v.abs() < GRAD_TOL));
    }

    #[test]
    fn constant_features_are_intercept_only() {
        let data = vec![ex(0.5, 0.0, true), ex(0.5, 0.0, false), ex(0.5, 0.0, true)];
        let m = train_calibration(&data, 0.0).unwrap();
        assert_eq!((m.w_conf, m.w_lm), (0.0, 0.0));
        assert!((m.predict(0.5, 0.0) - 2.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn zero_lm_column_still_converges() {
        let data: Vec<_> = random_set(4, 300).into_iter().map(|e| ex(e.confidence, 0.0, e.correct)).collect();
        let m = train_calibration(&data, 0.0).unwrap();
        let (_, g) = loss_and_gradient(&m.weights(), &data, 0.0);
        assert!(g.iter().all(|v| v.abs() < GRAD_TOL), "{g:?}");
        assert_eq!(m.w_lm, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = random_set(7, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let w = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)];
            let (_, g) = loss_and_gradient(&w, &data, 0.05);
            for k in 0..3 {
                let h = 1e-5;
                let mut wp = w;
                let mut wm = w;
                wp[k] += h;
                wm[k] -= h;
                let fd = (loss_and_gradient(&wp, &data, 0.05).0 - loss_and_gradient(&wm, &data, 0.05).0) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-3), "{k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn model_text_roundtrip() {
        let m = CalibrationModel { intercept: -0.125, w_conf: 1.0 / 3.0, w_lm: 2.5e-7, lambda: 0.01 };
        assert_eq!(CalibrationModel::from_text(&m.to_text()).unwrap(), m);
        assert!(CalibrationModel::from_text("intercept 1\nw_conf x\nw_lm 0\n").is_err());
        assert!(CalibrationModel::from_text("intercept 1\nw_lm 0\n").is_err());
        assert!(CalibrationModel::from_text("intercept 1\nw_conf 1\nw_lm 0\nbias 3\n").is_err());
    }

    #[test]
    fn overconfident_inputs_gain_nce() {
        // true accuracy is conf^3, so raw confidences are too high
        let gen = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..4000)
                .map(|_| {
                    let c: f64 = rng.gen_range(0.3..1.0);
                    ex(c, 0.0, rng.gen::<f64>() < c.powi(3))
                })
                .collect::<Vec<_>>()
        };
        let (train, test) = (gen(1), gen(2));
        let m = train_calibration(&train, 1e-3).unwrap();
        let before: Vec<_> = test.iter().map(|e| (e.confidence, e.correct)).collect();
        let after: Vec<_> = test.iter().map(|e| (m.predict(e.confidence, e.lm_score), e.correct)).collect();
        assert!(compute_nce(&after).unwrap() > compute_nce(&before).unwrap());
    }

    proptest! {
        #[test]
        fn predictions_inside_unit_interval(
            w0 in -1e3f64..1e3, w1 in -1e3f64..1e3, w2 in -1e3f64..1e3,
            c in 0.0f64..=1.0, lm in -1e3f64..1e3,
        ) {
            let m = CalibrationModel { intercept: w0, w_conf: w1, w_lm: w2, lambda: 0.0 };
            let p = m.predict(c, lm);
            prop_assert!(p > 0.0 && p < 1.0);
        }

        #[test]
        fn monotone_in_confidence(w1 in 0.01f64..2.0, w0 in -3.0f64..3.0, a in 0.001f64..0.999, b in 0.001f64..0.999) {
            prop_assume!((a - b).abs() > 1e-6);
            let m = CalibrationModel { intercept: w0, w_conf: w1, w_lm: 0.0, lambda: 0.0 };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(m.predict(lo, 0.0) < m.predict(hi, 0.0));
        }

        #[test]
        fn nce_at_most_one(pairs in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 2..50)) {
            if let Ok(v) = compute_nce(&pairs) {
                prop_assert!(v <= 1.0 + 1e-12);
            }
        }
    }
}
