//! Evaluation harness: per-crowd-level error confusion tables, ROC/AUC with
//! k-fold cross validation, and detection-lag statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True-count bins, inclusive.
pub const CROWD_BINS: [(u32, u32); 4] = [(0, 10), (11, 25), (26, 50), (51, 75)];
/// Absolute-error bins; the last bin is open-ended and only rendered when
/// non-zero.
pub const ERROR_BINS: [(u32, u32); 5] = [(0, 5), (6, 10), (11, 15), (16, 20), (21, u32::MAX)];

/// Percentage of frames per (crowd bin, error bin); every populated column
/// sums to 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorConfusion {
    /// `cells[error_bin][crowd_bin]`, percentages.
    pub cells: [[f64; 4]; 5],
    /// Frames per crowd bin.
    pub column_counts: [u64; 4],
    /// Frames whose true count exceeded the top bin.
    pub skipped: u64,
}

pub fn crowd_bin(true_count: u32) -> Option<usize> {
    CROWD_BINS.iter().position(|&(lo, hi)| true_count >= lo && true_count <= hi)
}

pub fn error_bin(abs_error: u32) -> usize {
    ERROR_BINS.iter().position(|&(lo, hi)| abs_error >= lo && abs_error <= hi).unwrap()
}

/// Builds the confusion table from aligned per-frame estimates and truth.
/// Frames are binned by their TRUE count; the error is
/// `|round(estimate) - truth|`.
pub fn error_confusion(estimates: &[f64], truth: &[u32]) -> Result<ErrorConfusion> {
    if estimates.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "estimate/truth lengths differ: {} vs {}",
            estimates.len(),
            truth.len()
        )));
    }
    let mut counts = [[0u64; 4]; 5];
    let mut column_counts = [0u64; 4];
    let mut skipped = 0u64;
    for (&est, &t) in estimates.iter().zip(truth) {
        match crowd_bin(t) {
            Some(cb) => {
                let err = (est.round() as i64 - t as i64).unsigned_abs() as u32;
                counts[error_bin(err)][cb] += 1;
                column_counts[cb] += 1;
            }
            None => skipped += 1,
        }
    }
    let mut cells = [[0f64; 4]; 5];
    for cb in 0..4 {
        if column_counts[cb] > 0 {
            for eb in 0..5 {
                cells[eb][cb] = 100.0 * counts[eb][cb] as f64 / column_counts[cb] as f64;
            }
        }
    }
    Ok(ErrorConfusion { cells, column_counts, skipped })
}

impl ErrorConfusion {
    /// Mean absolute error per crowd bin needs the raw data; this helper
    /// checks the column-sum invariant instead.
    pub fn columns_sum_to_100(&self) -> bool {
        (0..4).all(|cb| {
            if self.column_counts[cb] == 0 {
                return true;
            }
            let sum: f64 = (0..5).map(|eb| self.cells[eb][cb]).sum();
            (sum - 100.0).abs() <= 0.5
        })
    }

    /// Aligned-text table in the shape of the published count-accuracy
    /// matrix: crowd-level columns, absolute-error rows.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Ground truth      Low crowd           High crowd\n");
        out.push_str("People count   ");
        for (lo, hi) in CROWD_BINS {
            out.push_str(&format!("{:>9}", format!("[{lo},{hi}]")));
        }
        out.push('\n');
        out.push_str("Absolute error        Occurrences per crowd level (%)\n");
        for eb in 0..5 {
            let (lo, hi) = ERROR_BINS[eb];
            let all_zero = (0..4).all(|cb| self.cells[eb][cb] == 0.0);
            if eb == 4 && all_zero {
                continue; // open-ended bin rendered only when populated
            }
            let label = if hi == u32::MAX { format!(">{}", lo - 1) } else { format!("[{lo},{hi}]") };
            out.push_str(&format!("{label:<15}"));
            for cb in 0..4 {
                out.push_str(&format!("{:>9.0}", self.cells[eb][cb]));
            }
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("error_bin,crowd_0_10,crowd_11_25,crowd_26_50,crowd_51_75\n");
        for eb in 0..5 {
            let (lo, hi) = ERROR_BINS[eb];
            let label = if hi == u32::MAX { format!(">{}", lo - 1) } else { format!("{lo}-{hi}") };
            out.push_str(&format!(
                "{label},{},{},{},{}\n",
                self.cells[eb][0], self.cells[eb][1], self.cells[eb][2], self.cells[eb][3]
            ));
        }
        out
    }
}

/// ROC curve with its trapezoidal AUC.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocResult {
    /// (false positive rate, true positive rate), ascending.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub thresholds: Vec<f64>,
}

/// Threshold sweep over the unique scores; the trapezoidal AUC equals the
/// Mann-Whitney pair statistic with ties counted half.
pub fn roc_auc(scores: &[f64], labels: &[i8]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Alignment("score/label lengths differ".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l > 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Validation("ROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0usize;
    while i < order.len() {
        let score = scores[order[i]];
        // consume the whole tie group at once
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] > 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(score);
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(RocResult { points, auc, thresholds })
}

/// Deterministic seeded k-fold partition with fold sizes differing by at
/// most one.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::Validation(format!("k = {k} must be within 1..={n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + (f < extra) as usize;
        folds.push(idx[at..at + size].to_vec());
        at += size;
    }
    Ok(folds)
}

/// Seeded 90/10 train/test split.
pub fn split_train_test(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_test = (n as f64 * 0.1).round().max(1.0) as usize;
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    (train, test)
}

/// Outcome of matching an alert stream against a ground-truth onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagResult {
    /// Seconds from onset to the first alert inside the grace window; None
    /// when the incident was missed.
    pub lag_s: Option<f64>,
    /// Alerts firing before the grace window.
    pub false_alarms: usize,
}

/// Lag of the first alert at or after `onset - grace`, in seconds. Earlier
/// alerts count as false alarms.
pub fn detection_lag(alerts: &[u32], onset: u32, fps: f64, grace_s: f64) -> LagResult {
    let grace_frames = (grace_s * fps).round() as i64;
    let earliest = onset as i64 - grace_frames;
    let false_alarms = alerts.iter().filter(|&&a| (a as i64) < earliest).count();
    let first = alerts.iter().find(|&&a| a as i64 >= earliest);
    LagResult {
        lag_s: first.map(|&a| (a as f64 - onset as f64) / fps),
        false_alarms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn perfect_estimator_all_in_first_bin() {
        let truth: Vec<u32> = (0..80).map(|i| i % 76).collect();
        let estimates: Vec<f64> = truth.iter().map(|&t| t as f64).collect();
        let c = error_confusion(&estimates, &truth).unwrap();
        for cb in 0..4 {
            assert_eq!(c.cells[0][cb], 100.0);
        }
        assert!(c.columns_sum_to_100());
    }

    #[test]
    fn constant_offset_lands_in_correct_bin() {
        let truth: Vec<u32> = (0..76).collect();
        let estimates: Vec<f64> = truth.iter().map(|&t| t as f64 + 7.0).collect();
        let c = error_confusion(&estimates, &truth).unwrap();
        for cb in 0..4 {
            assert_eq!(c.cells[1][cb], 100.0, "crowd bin {cb}");
        }
    }

    #[test]
    fn rendering_matches_published_fusion_columns() {
        // Feed the cells the published fusion values for the low and high
        // crowd columns and check the rendered rows.
        let mut c = ErrorConfusion { cells: [[0.0; 4]; 5], column_counts: [100; 4], skipped: 0 };
        c.cells[0] = [100.0, 99.0, 92.0, 91.0];
        c.cells[1] = [0.0, 1.0, 8.0, 9.0];
        let text = c.render_text();
        let lines: Vec<&str> = text.lines().collect();
        let row0 = lines.iter().find(|l| l.starts_with("[0,5]")).unwrap();
        assert!(row0.contains("100") && row0.ends_with("91"));
        let row1 = lines.iter().find(|l| l.starts_with("[6,10]")).unwrap();
        assert!(row1.trim_end().ends_with('9'));
        // the open-ended bin is hidden when empty
        assert!(!text.contains(">20"));
    }

    #[test]
    fn mismatched_lengths_alignment_error() {
        assert!(matches!(
            error_confusion(&[1.0], &[1, 2]),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn roc_perfectly_separated() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1i8, 1, -1, -1];
        let r = roc_auc(&scores, &labels).unwrap();
        assert_eq!(r.auc, 1.0);
    }

    #[test]
    fn roc_independent_labels_near_half() {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let scores: Vec<f64> = (0..4000).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<i8> = (0..4000).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
        let r = roc_auc(&scores, &labels).unwrap();
        assert!((r.auc - 0.5).abs() <= 0.05, "auc {}", r.auc);
    }

    /// O(n²) Mann-Whitney pair counting with ties at half weight.
    pub(crate) fn auc_pair_oracle(scores: &[f64], labels: &[i8]) -> f64 {
        let mut concordant = 0f64;
        let mut pairs = 0f64;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] <= 0 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] > 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    concordant += 1.0;
                } else if si == sj {
                    concordant += 0.5;
                }
            }
        }
        concordant / pairs
    }

    #[test]
    fn auc_equals_pair_counting_oracle() {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        for _ in 0..10 {
            // quantized scores force ties through the tie-handling path
            let scores: Vec<f64> =
                (0..50).map(|_| (rng.gen::<f64>() * 10.0).round() / 10.0).collect();
            let labels: Vec<i8> =
                (0..50).map(|_| if rng.gen_bool(0.4) { 1 } else { -1 }).collect();
            if labels.iter().all(|&l| l > 0) || labels.iter().all(|&l| l < 0) {
                continue;
            }
            let r = roc_auc(&scores, &labels).unwrap();
            let oracle = auc_pair_oracle(&scores, &labels);
            assert!((r.auc - oracle).abs() <= 1e-12, "{} vs {}", r.auc, oracle);
        }
    }

    #[test]
    fn auc_negation_symmetry() {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let scores: Vec<f64> = (0..60).map(|_| (rng.gen::<f64>() * 5.0).round()).collect();
        let labels: Vec<i8> = (0..60).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = roc_auc(&scores, &labels).unwrap().auc;
        let b = roc_auc(&neg, &labels).unwrap().auc;
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_one_class_rejected() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn kfold_partition_laws() {
        let folds = kfold(10, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        // determinism
        assert_eq!(folds, kfold(10, 5, 3).unwrap());
        // sizes differ by at most one
        let folds = kfold(11, 4, 9).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(kfold(3, 5, 0).is_err());
    }

    #[test]
    fn ninety_ten_split() {
        let (train, test) = split_train_test(100, 5);
        assert_eq!(test.len(), 10);
        assert_eq!(train.len(), 90);
        let mut all = train.clone();
        all.extend(&test);
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn lag_arithmetic() {
        assert_eq!(detection_lag(&[100], 100, 25.0, 1.0).lag_s, Some(0.0));
        // 250 frames after onset at 25 fps = 10 s
        assert_eq!(detection_lag(&[350], 100, 25.0, 1.0).lag_s, Some(10.0));
        let miss = detection_lag(&[], 100, 25.0, 1.0);
        assert_eq!(miss.lag_s, None);
        assert_eq!(miss.false_alarms, 0);
    }

    #[test]
    fn early_alerts_are_false_alarms() {
        let r = detection_lag(&[10, 80, 110], 100, 25.0, 1.0);
        // grace window starts at frame 75; the alert at 80 is the detection
        assert_eq!(r.false_alarms, 1);
        assert_eq!(r.lag_s, Some((80.0 - 100.0) / 25.0));
    }
}
