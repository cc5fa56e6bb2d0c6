//! Discrete AdaBoost over depth-2 decision trees on channel-cell features.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BoxClass;

pub const MODEL_VERSION: u32 = 1;
/// Weight assigned to a round that classifies the training set perfectly.
const ALPHA_CAP: f64 = 13.815510557964274; // 0.5 * ln((1-1e-12)/1e-12)

/// A single split: go left when `value < threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitNode {
    pub feature: u32,
    pub threshold: f32,
}

impl SplitNode {
    /// A split that sends every sample right; used for pure children.
    /// The threshold must stay finite to survive JSON round-trips.
    fn pass_through() -> Self {
        SplitNode { feature: 0, threshold: f32::MIN }
    }
}

/// Depth-2 tree: a root split, two child splits, four ±1 leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTwoTree {
    pub root: SplitNode,
    pub children: [SplitNode; 2],
    /// Leaf votes in order [left-left, left-right, right-left, right-right].
    pub leaves: [i8; 4],
}

impl DepthTwoTree {
    #[inline]
    pub fn eval(&self, features: &[f32]) -> i8 {
        let side = (features[self.root.feature as usize] >= self.root.threshold) as usize;
        let child = &self.children[side];
        let sub = (features[child.feature as usize] >= child.threshold) as usize;
        self.leaves[side * 2 + sub]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostRound {
    pub tree: DepthTwoTree,
    pub weight: f64,
}

/// A trained sliding-window classifier for one detection class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub version: u32,
    pub class: BoxClass,
    pub window_w: u32,
    pub window_h: u32,
    pub cell_size: u32,
    /// Rounds stored in descending-weight order; the margin is the
    /// weight-by-vote sum over all rounds, so ordering is free to choose.
    pub rounds: Vec<BoostRound>,
    pub score_threshold: f64,
}

impl BoostedModel {
    pub fn window_cells(&self) -> (usize, usize) {
        (
            (self.window_w / self.cell_size) as usize,
            (self.window_h / self.cell_size) as usize,
        )
    }

    pub fn n_features(&self) -> usize {
        let (wc, hc) = self.window_cells();
        super::channels::NUM_CHANNELS * wc * hc
    }

    /// Raw ensemble margin on a window-sized feature vector.
    pub fn margin(&self, features: &[f32]) -> f64 {
        debug_assert_eq!(features.len(), self.n_features());
        self.rounds.iter().map(|r| r.weight * r.tree.eval(features) as f64).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: BoostedModel = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.version != MODEL_VERSION {
            return Err(Error::Format {
                path: path.to_owned(),
                reason: format!("unsupported detector model version {}", model.version),
            });
        }
        Ok(model)
    }
}

#[derive(Debug, Clone)]
pub struct BoostConfig {
    pub rounds: usize,
    pub class: BoxClass,
    pub window_w: u32,
    pub window_h: u32,
    pub cell_size: u32,
}

impl BoostConfig {
    pub fn for_class(class: BoxClass) -> Self {
        let (window_w, window_h) = default_window(class);
        BoostConfig { rounds: 256, class, window_w, window_h, cell_size: 4 }
    }
}

/// Default sliding-window sizes in pixels per class.
pub fn default_window(class: BoxClass) -> (u32, u32) {
    match class {
        BoxClass::FullBody => (32, 64),
        BoxClass::HeadShoulders => (24, 24),
        BoxClass::Head => (16, 16),
    }
}

/// Per-round diagnostics from training.
#[derive(Debug, Clone)]
pub struct BoostStats {
    /// Weighted error of each round's tree.
    pub round_errors: Vec<f64>,
    /// Running product of the per-round bounds 2*sqrt(eps*(1-eps)); an upper
    /// bound on the ensemble training error, non-increasing by construction.
    pub error_bound: Vec<f64>,
    /// 0-1 training error of the ensemble after each round.
    pub train_errors: Vec<f64>,
}

/// Trains discrete AdaBoost over depth-2 trees.
///
/// `positives` and `negatives` are window-sized feature vectors as produced
/// by [`super::channels::ChannelStack::window_features`].
pub fn train_boosted(
    positives: &[Vec<f32>],
    negatives: &[Vec<f32>],
    cfg: &BoostConfig,
) -> Result<(BoostedModel, BoostStats)> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Train("both classes must be present".into()));
    }
    if positives.len() < 10 || negatives.len() < 10 {
        return Err(Error::Train(format!(
            "need at least 10 examples per side, got {} positive / {} negative",
            positives.len(),
            negatives.len()
        )));
    }
    let n_features = (super::channels::NUM_CHANNELS as u32
        * (cfg.window_w / cfg.cell_size)
        * (cfg.window_h / cfg.cell_size)) as usize;
    for s in positives.iter().chain(negatives) {
        if s.len() != n_features {
            return Err(Error::Train(format!(
                "feature vector length {} does not match window ({} expected)",
                s.len(),
                n_features
            )));
        }
    }

    let n = positives.len() + negatives.len();
    let mut features = Vec::with_capacity(n * n_features);
    let mut labels = Vec::with_capacity(n);
    for s in positives {
        features.extend_from_slice(s);
        labels.push(1i8);
    }
    for s in negatives {
        features.extend_from_slice(s);
        labels.push(-1i8);
    }

    // Presort sample indices by value, once per feature.
    let mut sorted: Vec<Vec<u32>> = Vec::with_capacity(n_features);
    for f in 0..n_features {
        let mut idx: Vec<u32> = (0..n as u32).collect();
        idx.sort_by(|&a, &b| {
            features[a as usize * n_features + f]
                .partial_cmp(&features[b as usize * n_features + f])
                .unwrap()
                .then(a.cmp(&b))
        });
        sorted.push(idx);
    }

    let mut weights = vec![1.0 / n as f64; n];
    let mut rounds: Vec<BoostRound> = Vec::new();
    let mut stats = BoostStats { round_errors: Vec::new(), error_bound: Vec::new(), train_errors: Vec::new() };
    let mut margins = vec![0f64; n];
    let mut bound = 1.0f64;

    let all: Vec<u32> = (0..n as u32).collect();
    for _round in 0..cfg.rounds {
        let tree = match fit_tree(&features, n_features, &labels, &weights, &sorted, &all) {
            Some(t) => t,
            None => break, // no informative split left
        };
        let votes: Vec<i8> =
            (0..n).map(|i| tree.eval(&features[i * n_features..(i + 1) * n_features])).collect();
        let eps: f64 = (0..n).filter(|&i| votes[i] != labels[i]).map(|i| weights[i]).sum();
        if eps >= 0.5 {
            break;
        }
        let perfect = eps <= 0.0;
        let alpha = if perfect { ALPHA_CAP } else { 0.5 * ((1.0 - eps) / eps).ln() };
        rounds.push(BoostRound { tree, weight: alpha });
        stats.round_errors.push(eps);
        bound *= 2.0 * (eps.max(1e-300) * (1.0 - eps)).sqrt();
        stats.error_bound.push(bound);
        for i in 0..n {
            margins[i] += alpha * votes[i] as f64;
        }
        stats
            .train_errors
            .push((0..n).filter(|&i| margins[i] * labels[i] as f64 <= 0.0).count() as f64 / n as f64);
        if perfect {
            break;
        }
        let mut z = 0.0;
        for i in 0..n {
            weights[i] *= (-alpha * labels[i] as f64 * votes[i] as f64).exp();
            z += weights[i];
        }
        for w in weights.iter_mut() {
            *w /= z;
        }
    }
    if rounds.is_empty() {
        return Err(Error::Train("no split separates the classes at all".into()));
    }
    // Largest weights first so the window evaluator's early-out bound
    // tightens as fast as possible.
    rounds.sort_by(|a, b| b.weight.partial_cmp(&a.weight).unwrap());
    Ok((
        BoostedModel {
            version: MODEL_VERSION,
            class: cfg.class,
            window_w: cfg.window_w,
            window_h: cfg.window_h,
            cell_size: cfg.cell_size,
            rounds,
            score_threshold: 0.0,
        },
        stats,
    ))
}

struct Split {
    feature: u32,
    /// Samples with value strictly below go left.
    threshold: f32,
    error: f64,
}

/// Finds (feature, threshold) minimizing weighted stump error over `node`,
/// with each side voting its weighted majority. Ties resolve to the smallest
/// feature index, then the smallest threshold.
fn best_split(
    features: &[f32],
    n_features: usize,
    labels: &[i8],
    weights: &[f64],
    sorted: &[Vec<u32>],
    node: &[bool],
    w_pos_total: f64,
    w_neg_total: f64,
) -> Option<Split> {
    let mut best: Option<Split> = None;
    for f in 0..n_features {
        let mut w_pos_left = 0.0f64;
        let mut w_neg_left = 0.0f64;
        let order = &sorted[f];
        let mut prev_value: Option<f32> = None;
        for &i in order {
            let i = i as usize;
            if !node[i] {
                continue;
            }
            let value = features[i * n_features + f];
            if let Some(pv) = prev_value {
                if value > pv {
                    // candidate boundary: left = strictly below `value`
                    let w_pos_right = w_pos_total - w_pos_left;
                    let w_neg_right = w_neg_total - w_neg_left;
                    let err = w_pos_left.min(w_neg_left) + w_pos_right.min(w_neg_right);
                    if best.as_ref().map_or(true, |b| err < b.error) {
                        best = Some(Split { feature: f as u32, threshold: value, error: err });
                    }
                }
            }
            if labels[i] > 0 {
                w_pos_left += weights[i];
            } else {
                w_neg_left += weights[i];
            }
            prev_value = Some(value);
        }
    }
    best
}

fn majority_vote(labels: &[i8], weights: &[f64], node: &[bool]) -> i8 {
    let mut w_pos = 0.0;
    let mut w_neg = 0.0;
    for (i, &inside) in node.iter().enumerate() {
        if inside {
            if labels[i] > 0 {
                w_pos += weights[i];
            } else {
                w_neg += weights[i];
            }
        }
    }
    if w_pos > w_neg {
        1
    } else {
        -1
    }
}

fn fit_tree(
    features: &[f32],
    n_features: usize,
    labels: &[i8],
    weights: &[f64],
    sorted: &[Vec<u32>],
    samples: &[u32],
) -> Option<DepthTwoTree> {
    let n = labels.len();
    let mut node = vec![false; n];
    let mut w_pos = 0.0;
    let mut w_neg = 0.0;
    for &i in samples {
        node[i as usize] = true;
        if labels[i as usize] > 0 {
            w_pos += weights[i as usize];
        } else {
            w_neg += weights[i as usize];
        }
    }
    let root = best_split(features, n_features, labels, weights, sorted, &node, w_pos, w_neg)?;

    let mut tree = DepthTwoTree {
        root: SplitNode { feature: root.feature, threshold: root.threshold },
        children: [SplitNode::pass_through(), SplitNode::pass_through()],
        leaves: [0; 4],
    };
    for side in 0..2 {
        let mut child = vec![false; n];
        let mut c_pos = 0.0;
        let mut c_neg = 0.0;
        for &i in samples {
            let i = i as usize;
            let v = features[i * n_features + root.feature as usize];
            let on_side = if side == 0 { v < root.threshold } else { v >= root.threshold };
            if on_side {
                child[i] = true;
                if labels[i] > 0 {
                    c_pos += weights[i];
                } else {
                    c_neg += weights[i];
                }
            }
        }
        let pure = c_pos == 0.0 || c_neg == 0.0;
        let sub = if pure {
            None
        } else {
            best_split(features, n_features, labels, weights, sorted, &child, c_pos, c_neg)
        };
        match sub {
            Some(s) => {
                tree.children[side] = SplitNode { feature: s.feature, threshold: s.threshold };
                for sub_side in 0..2 {
                    let mut leaf_node = vec![false; n];
                    for (i, &inside) in child.iter().enumerate() {
                        if inside {
                            let v = features[i * n_features + s.feature as usize];
                            let on = if sub_side == 0 { v < s.threshold } else { v >= s.threshold };
                            if on {
                                leaf_node[i] = true;
                            }
                        }
                    }
                    tree.leaves[side * 2 + sub_side] = majority_vote(labels, weights, &leaf_node);
                }
            }
            None => {
                let vote = majority_vote(labels, weights, &child);
                tree.leaves[side * 2] = vote;
                tree.leaves[side * 2 + 1] = vote;
            }
        }
    }
    Some(tree)
}
