//! Shared learning machinery: linear SVM training, Platt-style calibration,
//! score-level fusion, and the pooled incident-confidence stream.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SVM_MODEL_VERSION: u32 = 1;

/// Linear SVM with sigmoid calibration `P = 1 / (1 + exp(A*margin + B))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub version: u32,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(rename = "A")]
    pub calib_a: f64,
    #[serde(rename = "B")]
    pub calib_b: f64,
}

impl LinearSvmModel {
    /// Uncalibrated model with the identity-style sigmoid (A=-1, B=0).
    pub fn raw(weights: Vec<f64>, bias: f64) -> Self {
        LinearSvmModel {
            version: SVM_MODEL_VERSION,
            feature_dim: weights.len(),
            weights,
            bias,
            calib_a: -1.0,
            calib_b: 0.0,
        }
    }

    pub fn margin(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len(), self.feature_dim);
        self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    pub fn margin_checked(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_dim {
            return Err(Error::Validation(format!(
                "feature length {} does not match model dim {}",
                features.len(),
                self.feature_dim
            )));
        }
        Ok(self.margin(features))
    }

    /// Calibrated probability of the positive class, strictly inside (0,1).
    pub fn probability(&self, margin: f64) -> f64 {
        let z = self.calib_a * margin + self.calib_b;
        // numerically safe logistic
        let p = if z >= 0.0 { (-z).exp() / (1.0 + (-z).exp()) } else { 1.0 / (1.0 + z.exp()) };
        p.clamp(f64::MIN_POSITIVE, 1.0 - 1e-16)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: LinearSvmModel = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.version != SVM_MODEL_VERSION {
            return Err(Error::Format {
                path: path.to_owned(),
                reason: format!("unsupported SVM model version {}", model.version),
            });
        }
        if model.weights.len() != model.feature_dim {
            return Err(Error::Format {
                path: path.to_owned(),
                reason: "weight length disagrees with feature_dim".into(),
            });
        }
        Ok(model)
    }
}

#[derive(Debug, Clone)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Train an unregularized bias term. Off for classifiers that must be
    /// exactly antisymmetric under feature negation.
    pub fit_bias: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 10.0, epochs: 300, seed: 0, fit_bias: true }
    }
}

/// Objective values of the accepted epochs; non-increasing by construction.
#[derive(Debug, Clone)]
pub struct SvmTrace {
    pub objectives: Vec<f64>,
}

fn svm_objective(x: &[Vec<f64>], y: &[i8], w: &[f64], b: f64, lambda: f64) -> f64 {
    let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let m = yi as f64 * (w.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>() + b);
            (1.0 - m).max(0.0)
        })
        .sum::<f64>()
        / x.len() as f64;
    reg + hinge
}

/// L2-regularized hinge loss minimized by deterministic epoch-based
/// subgradient descent with a fixed seeded shuffle per epoch. An epoch whose
/// full objective worsens is rolled back and retried at half the step size,
/// so the recorded objective trace decreases monotonically.
pub fn train_svm(x: &[Vec<f64>], y: &[i8], cfg: &SvmConfig) -> Result<(LinearSvmModel, SvmTrace)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Train("empty or mismatched SVM training data".into()));
    }
    let dim = x[0].len();
    if x.iter().any(|v| v.len() != dim) {
        return Err(Error::Train("feature rows must share one length".into()));
    }
    let pos = y.iter().filter(|&&l| l > 0).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Train("both classes must be present".into()));
    }
    let n = x.len();
    let lambda = 1.0 / (cfg.c * n as f64);

    let mut w = vec![0f64; dim];
    let mut b = 0f64;
    let mut step = 1.0f64;
    let mut objective = svm_objective(x, y, &w, b, lambda);
    let mut trace = SvmTrace { objectives: vec![objective] };
    let mut halvings = 0u32;

    let mut epoch = 0usize;
    while epoch < cfg.epochs && halvings < 60 {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let w_prev = w.clone();
        let b_prev = b;
        for &i in &order {
            let xi = &x[i];
            let yi = y[i] as f64;
            let margin = yi * (w.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>() + b);
            let shrink = 1.0 - step * lambda;
            for v in w.iter_mut() {
                *v *= shrink;
            }
            if margin < 1.0 {
                for (v, &c) in w.iter_mut().zip(xi) {
                    *v += step * yi * c;
                }
                if cfg.fit_bias {
                    b += step * yi;
                }
            }
        }
        let new_objective = svm_objective(x, y, &w, b, lambda);
        if new_objective <= objective {
            objective = new_objective;
            trace.objectives.push(objective);
            epoch += 1;
        } else {
            w = w_prev;
            b = b_prev;
            step *= 0.5;
            halvings += 1;
        }
    }
    Ok((LinearSvmModel::raw(w, b), trace))
}

/// Fits Platt sigmoid parameters on held-out margins by damped Newton
/// iteration and stores them on the model.
pub fn calibrate(model: &mut LinearSvmModel, margins: &[f64], labels: &[i8]) -> Result<()> {
    if margins.len() != labels.len() {
        return Err(Error::Train("margin/label lengths differ".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l > 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos < 10 || n_neg < 10 {
        return Err(Error::Train(format!(
            "calibration needs at least 10 held-out samples per class, got {n_pos}/{n_neg}"
        )));
    }
    let spread = margins.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
        (lo.min(m), hi.max(m))
    });
    if spread.1 - spread.0 < 1e-12 {
        return Err(Error::Train("calibration error: margins are degenerate (all equal)".into()));
    }

    // prior-corrected targets
    let hi_t = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let lo_t = 1.0 / (n_neg as f64 + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l > 0 { hi_t } else { lo_t }).collect();

    let mut a = 0.0f64;
    let mut bb = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let nll = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&targets)
            .map(|(&m, &t)| {
                let z = a * m + b;
                // -t*ln(p) - (1-t)*ln(1-p) with p = 1/(1+e^z) reduces to
                // ln(1+e^z) - (1-t)*z; both branches are the stable form
                if z >= 0.0 {
                    t * z + (1.0 + (-z).exp()).ln()
                } else {
                    (t - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };
    let mut f_cur = nll(a, bb);
    for _ in 0..200 {
        let mut g_a = 0.0;
        let mut g_b = 0.0;
        let mut h_aa = 1e-12;
        let mut h_ab = 0.0;
        let mut h_bb = 1e-12;
        for (&m, &t) in margins.iter().zip(&targets) {
            let z = a * m + bb;
            let p = if z >= 0.0 { (-z).exp() / (1.0 + (-z).exp()) } else { 1.0 / (1.0 + z.exp()) };
            let d = t - p; // dNLL/dz with p = sigma(-z)
            g_a += d * m;
            g_b += d;
            let w = p * (1.0 - p);
            h_aa += w * m * m;
            h_ab += w * m;
            h_bb += w;
        }
        if g_a.abs() < 1e-10 && g_b.abs() < 1e-10 {
            break;
        }
        let det = h_aa * h_bb - h_ab * h_ab;
        if det.abs() < 1e-300 {
            return Err(Error::Numeric("singular Hessian in calibration".into()));
        }
        let da = -(h_bb * g_a - h_ab * g_b) / det;
        let db = -(-h_ab * g_a + h_aa * g_b) / det;
        // damped step
        let mut stepsize = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let (na, nb) = (a + stepsize * da, bb + stepsize * db);
            let f_new = nll(na, nb);
            if f_new < f_cur + 1e-12 {
                a = na;
                bb = nb;
                f_cur = f_new;
                accepted = true;
                break;
            }
            stepsize *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    model.calib_a = a;
    model.calib_b = bb;
    Ok(())
}

/// Score-level fusion: the arithmetic mean of the two branch confidences.
pub fn fuse_scores(flow_score: f64, tracklet_score: f64) -> Result<f64> {
    for (name, v) in [("flow", flow_score), ("tracklet", tracklet_score)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Validation(format!("{name} score {v} outside [0,1]")));
        }
    }
    Ok((flow_score + tracklet_score) / 2.0)
}

/// One frame of the incident-confidence stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentScore {
    pub frame_index: u32,
    pub flow_score: f64,
    pub tracklet_score: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct IncidentStreamConfig {
    /// Sliding mean window in seconds.
    pub window_s: f64,
    /// Confidence level whose upward crossing raises an alert.
    pub alert_threshold: f64,
}

impl Default for IncidentStreamConfig {
    fn default() -> Self {
        IncidentStreamConfig { window_s: 2.0, alert_threshold: 0.4 }
    }
}

/// Pools per-frame branch scores with a trailing mean, fuses them, and emits
/// one [`IncidentScore`] per frame plus the alert frames (upward crossings
/// of the threshold).
pub fn incident_stream(
    flow_scores: &[f64],
    tracklet_scores: &[f64],
    fps: f64,
    first_frame: u32,
    cfg: &IncidentStreamConfig,
) -> Result<(Vec<IncidentScore>, Vec<u32>)> {
    if flow_scores.len() != tracklet_scores.len() {
        return Err(Error::Alignment(format!(
            "branch score lengths differ: {} vs {}",
            flow_scores.len(),
            tracklet_scores.len()
        )));
    }
    let window = ((cfg.window_s * fps).round() as usize).max(1);
    let mut out = Vec::with_capacity(flow_scores.len());
    let mut alerts = Vec::new();
    let mut prev_conf = 0.0f64;
    for i in 0..flow_scores.len() {
        let lo = i + 1 - window.min(i + 1);
        let span = (i - lo + 1) as f64;
        let flow = flow_scores[lo..=i].iter().sum::<f64>() / span;
        let tracklet = tracklet_scores[lo..=i].iter().sum::<f64>() / span;
        let confidence = fuse_scores(flow, tracklet)?;
        let frame_index = first_frame + i as u32;
        if confidence > cfg.alert_threshold && (i == 0 || prev_conf <= cfg.alert_threshold) {
            alerts.push(frame_index);
        }
        prev_conf = confidence;
        out.push(IncidentScore { frame_index, flow_score: flow, tracklet_score: tracklet, confidence });
    }
    Ok((out, alerts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn two_point_max_margin() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![-1i8, 1];
        let cfg = SvmConfig { c: 1000.0, epochs: 2000, ..Default::default() };
        let (model, _) = train_svm(&x, &y, &cfg).unwrap();
        assert!(model.margin(&[1.0]) > 0.0);
        assert!(model.margin(&[-1.0]) < 0.0);
        // analytic max-margin solution for the 2-point problem: w = 1, b = 0
        assert!(
            (model.weights[0] - 1.0).abs() < 0.05,
            "weight {} departs from analytic 1.0",
            model.weights[0]
        );
    }

    #[test]
    fn label_flip_negates_weights() {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let x: Vec<Vec<f64>> =
            (0..40).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<i8> = x.iter().map(|v| if v[0] + v[1] > 0.0 { 1 } else { -1 }).collect();
        let y_flip: Vec<i8> = y.iter().map(|l| -l).collect();
        let cfg = SvmConfig::default();
        let (m1, _) = train_svm(&x, &y, &cfg).unwrap();
        let (m2, _) = train_svm(&x, &y_flip, &cfg).unwrap();
        for (a, b) in m1.weights.iter().zip(&m2.weights) {
            assert!((a + b).abs() < 1e-3, "{a} vs {b}");
        }
        assert!((m1.bias + m2.bias).abs() < 1e-3);
    }

    #[test]
    fn gaussian_blobs_generalize() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let label: i8 = if i % 2 == 0 { 1 } else { -1 };
            let center = label as f64 * 2.0; // 4 sigma separation
            x.push((0..10).map(|_| center + norm.sample(&mut rng)).collect::<Vec<f64>>());
            y.push(label);
        }
        let (train_x, test_x) = x.split_at(150);
        let (train_y, test_y) = y.split_at(150);
        let (model, _) = train_svm(train_x, train_y, &SvmConfig::default()).unwrap();
        let correct = test_x
            .iter()
            .zip(test_y)
            .filter(|(f, &l)| (model.margin(f) >= 0.0) == (l > 0))
            .count();
        let acc = correct as f64 / test_y.len() as f64;
        assert!(acc >= 0.98, "held-out accuracy {acc}");
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(train_svm(&x, &[1, 1], &SvmConfig::default()), Err(Error::Train(_))));
    }

    #[test]
    fn objective_trace_monotone() {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> =
            (0..80).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<i8> = x.iter().map(|v| if v[2] > 0.1 { 1 } else { -1 }).collect();
        let (_, trace) = train_svm(&x, &y, &SvmConfig::default()).unwrap();
        for w in trace.objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let x: Vec<Vec<f64>> =
            (0..50).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<i8> = x.iter().map(|v| if v[0] > 0.0 { 1 } else { -1 }).collect();
        let cfg = SvmConfig { seed: 7, ..Default::default() };
        let (m1, _) = train_svm(&x, &y, &cfg).unwrap();
        let (m2, _) = train_svm(&x, &y, &cfg).unwrap();
        assert_eq!(m1, m2);
    }

    fn calibrated_fixture(margins: &[f64], labels: &[i8]) -> LinearSvmModel {
        let mut model = LinearSvmModel::raw(vec![1.0], 0.0);
        calibrate(&mut model, margins, labels).unwrap();
        model
    }

    #[test]
    fn separated_margins_confident() {
        let mut margins = vec![-2.0; 10];
        margins.extend(vec![2.0; 10]);
        let mut labels = vec![-1i8; 10];
        labels.extend(vec![1i8; 10]);
        let model = calibrated_fixture(&margins, &labels);
        assert!(model.probability(2.0) > 0.9, "P(+2) = {}", model.probability(2.0));
        assert!(model.probability(-2.0) < 0.1, "P(-2) = {}", model.probability(-2.0));
    }

    #[test]
    fn balanced_zero_margin_is_half() {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        // symmetric margins around zero with matching labels
        let mut margins = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..50 {
            let m: f64 = rng.gen_range(0.2..2.0);
            margins.push(m);
            labels.push(1i8);
            margins.push(-m);
            labels.push(-1i8);
        }
        let model = calibrated_fixture(&margins, &labels);
        let p = model.probability(0.0);
        assert!((p - 0.5).abs() <= 0.05, "P(0) = {p}");
    }

    #[test]
    fn degenerate_margins_error() {
        let margins = vec![1.0; 30];
        let labels: Vec<i8> = (0..30).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let mut model = LinearSvmModel::raw(vec![1.0], 0.0);
        assert!(matches!(calibrate(&mut model, &margins, &labels), Err(Error::Train(_))));
    }

    #[test]
    fn calibration_monotone_decreasing_in_a_margin() {
        let mut margins = vec![-1.5; 12];
        margins.extend(vec![1.5; 12]);
        let mut labels = vec![-1i8; 12];
        labels.extend(vec![1i8; 12]);
        let model = calibrated_fixture(&margins, &labels);
        let mut prev = model.probability(-5.0);
        for i in -49..=50 {
            let m = i as f64 / 10.0;
            let p = model.probability(m);
            assert!((0.0..1.0).contains(&p));
            if model.calib_a < 0.0 {
                assert!(p >= prev - 1e-12, "not monotone at margin {m}");
            }
            prev = p;
        }
    }

    #[test]
    fn binned_reliability_within_tenth() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let mut margins = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..250 {
            margins.push(1.0 + norm.sample(&mut rng));
            labels.push(1i8);
            margins.push(-1.0 + norm.sample(&mut rng));
            labels.push(-1i8);
        }
        let model = calibrated_fixture(&margins, &labels);
        // binned calibration error: bin-weighted |mean confidence - freq|
        let mut bins = vec![(0.0f64, 0usize, 0usize); 10];
        for (&m, &l) in margins.iter().zip(&labels) {
            let p = model.probability(m);
            let b = ((p * 10.0) as usize).min(9);
            bins[b].0 += p;
            bins[b].1 += (l > 0) as usize;
            bins[b].2 += 1;
        }
        let n = margins.len() as f64;
        let mut ece = 0.0;
        for (sum_p, pos, count) in bins {
            if count > 0 {
                let mean_p = sum_p / count as f64;
                let freq = pos as f64 / count as f64;
                ece += (count as f64 / n) * (mean_p - freq).abs();
            }
        }
        assert!(ece <= 0.1, "binned calibration error {ece:.4}");
    }

    #[test]
    fn fuse_scores_rules() {
        assert_eq!(fuse_scores(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(fuse_scores(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(fuse_scores(0.9, 0.1).unwrap(), 0.5);
        assert_eq!(fuse_scores(0.3, 0.7).unwrap(), fuse_scores(0.7, 0.3).unwrap());
        assert!(fuse_scores(1.2, 0.0).is_err());
        assert!(fuse_scores(0.5, -0.1).is_err());
    }

    #[test]
    fn all_zero_scores_no_alerts() {
        let scores = vec![0.0; 100];
        let (stream, alerts) =
            incident_stream(&scores, &scores, 25.0, 0, &IncidentStreamConfig::default()).unwrap();
        assert_eq!(stream.len(), 100);
        assert!(alerts.is_empty());
        assert!(stream.iter().all(|s| s.confidence == 0.0));
    }

    #[test]
    fn alert_fires_on_upward_crossing() {
        let mut flow = vec![0.0; 50];
        flow.extend(vec![0.9; 100]);
        let tracklet = flow.clone();
        let (stream, alerts) =
            incident_stream(&flow, &tracklet, 25.0, 0, &IncidentStreamConfig::default()).unwrap();
        assert_eq!(alerts.len(), 1);
        assert!(alerts[0] >= 50);
        assert!(stream.iter().all(|s| (0.0..=1.0).contains(&s.confidence)));
    }

    #[test]
    fn lower_threshold_never_loses_or_delays_detection() {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let scores: Vec<f64> = (0..120).map(|_| rng.gen_range(0.0..1.0)).collect();
            let hi = IncidentStreamConfig { alert_threshold: 0.6, ..Default::default() };
            let lo = IncidentStreamConfig { alert_threshold: 0.3, ..Default::default() };
            let (_, alerts_hi) = incident_stream(&scores, &scores, 25.0, 0, &hi).unwrap();
            let (_, alerts_lo) = incident_stream(&scores, &scores, 25.0, 0, &lo).unwrap();
            if let Some(&first_hi) = alerts_hi.first() {
                let first_lo = *alerts_lo.first().expect("detection survives lower threshold");
                assert!(first_lo <= first_hi);
            }
        }
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = LinearSvmModel::raw(vec![0.1, -0.2, 0.3], 0.05);
        model.calib_a = -1.75;
        model.calib_b = 0.125;
        let path = dir.path().join("svm.json");
        model.save(&path).unwrap();
        let reloaded = LinearSvmModel::load(&path).unwrap();
        assert_eq!(model, reloaded);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"A\""));
        assert!(text.contains("\"feature_dim\""));
    }
}
