//! Counting-by-regression: 12-block foreground/edge ratio features with
//! perspective weighting, linear regression, and the embedding-driven SVR
//! variant.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PerspectiveMap, Roi};
use crate::segment::BinaryMask;

/// Number of horizontal blocks the frame is divided into.
pub const NUM_BLOCKS: usize = 12;
/// Feature dimension: (foreground ratio, edge ratio) per block.
pub const FEATURE_DIM: usize = 2 * NUM_BLOCKS;

/// Per-frame regression features. Entry `2k` is the perspective-weighted
/// foreground ratio of block `k`, entry `2k+1` its edge ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFeatures(pub [f64; FEATURE_DIM]);

impl BlockFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Extracts the 24-dimensional block features.
///
/// Pixels inside any exclusion rectangle contribute nothing to the numerator
/// and are removed from the denominator, so each ratio describes only the
/// residual (non-excluded) region. A fully excluded block yields 0 for both
/// ratios. Perspective weights apply to the numerator only.
pub fn extract_block_features(
    fg: &BinaryMask,
    edges: &BinaryMask,
    pmap: &PerspectiveMap,
    exclusions: &[Roi],
) -> Result<BlockFeatures> {
    if (fg.width, fg.height) != (edges.width, edges.height) {
        return Err(Error::Validation(format!(
            "mask dimensions differ: fg {}x{} vs edges {}x{}",
            fg.width, fg.height, edges.width, edges.height
        )));
    }
    let (w, h) = (fg.width as usize, fg.height as usize);
    for roi in exclusions {
        if !roi.fits_in(fg.width, fg.height) {
            return Err(Error::Validation(format!(
                "exclusion at ({},{}) size {}x{} exceeds {}x{}",
                roi.x, roi.y, roi.w, roi.h, w, h
            )));
        }
    }

    // Per-row exclusion spans keep this linear in pixel count.
    let mut excluded_row = vec![Vec::<(usize, usize)>::new(); h];
    for roi in exclusions {
        for y in roi.y..roi.y + roi.h {
            excluded_row[y as usize].push((roi.x as usize, (roi.x + roi.w) as usize));
        }
    }

    let mut fg_sum = [0f64; NUM_BLOCKS];
    let mut edge_sum = [0f64; NUM_BLOCKS];
    let mut denom = [0u64; NUM_BLOCKS];
    let fg_bits = fg.bits();
    let edge_bits = edges.bits();
    let mut excluded = vec![false; w];
    for y in 0..h {
        let block = y * NUM_BLOCKS / h;
        let weight = pmap.weight(y as u32);
        excluded.iter_mut().for_each(|e| *e = false);
        for &(x0, x1) in &excluded_row[y] {
            excluded[x0..x1].iter_mut().for_each(|e| *e = true);
        }
        let row = y * w;
        for x in 0..w {
            if excluded[x] {
                continue;
            }
            denom[block] += 1;
            if fg_bits[row + x] {
                fg_sum[block] += weight;
            }
            if edge_bits[row + x] {
                edge_sum[block] += weight;
            }
        }
    }

    let mut out = [0f64; FEATURE_DIM];
    for k in 0..NUM_BLOCKS {
        if denom[k] > 0 {
            out[2 * k] = fg_sum[k] / denom[k] as f64;
            out[2 * k + 1] = edge_sum[k] / denom[k] as f64;
        }
    }
    Ok(BlockFeatures(out))
}

/// Linear count model over [`BlockFeatures`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCountModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearCountModel {
    pub fn zero() -> Self {
        LinearCountModel { weights: vec![0.0; FEATURE_DIM], bias: 0.0 }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: LinearCountModel = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.weights.len() != FEATURE_DIM {
            return Err(Error::Format {
                path: path.to_owned(),
                reason: format!("expected {FEATURE_DIM} weights, found {}", model.weights.len()),
            });
        }
        Ok(model)
    }
}

/// Ridge term added to the normal equations for conditioning.
pub const RIDGE_LAMBDA: f64 = 1e-6;

/// Ordinary least squares with a small ridge term, solved through the normal
/// equations `(X'X + λI) w = X'y` over the bias-augmented design.
pub fn train_linear(features: &[BlockFeatures], counts: &[f64]) -> Result<LinearCountModel> {
    if features.len() != counts.len() {
        return Err(Error::Train("feature/count lengths differ".into()));
    }
    if features.len() < FEATURE_DIM + 1 {
        return Err(Error::Train(format!(
            "need at least {} samples, got {}",
            FEATURE_DIM + 1,
            features.len()
        )));
    }
    let n = features.len();
    let d = FEATURE_DIM + 1; // bias column
    let mut xtx = nalgebra::DMatrix::<f64>::zeros(d, d);
    let mut xty = nalgebra::DVector::<f64>::zeros(d);
    let mut row = [0f64; FEATURE_DIM + 1];
    for i in 0..n {
        row[..FEATURE_DIM].copy_from_slice(&features[i].0);
        row[FEATURE_DIM] = 1.0;
        for a in 0..d {
            xty[a] += row[a] * counts[i];
            for b in a..d {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
        xtx[(a, a)] += RIDGE_LAMBDA;
    }
    let chol = nalgebra::Cholesky::new(xtx)
        .ok_or_else(|| Error::Numeric("normal equations not positive definite".into()))?;
    let w = chol.solve(&xty);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite regression coefficients".into()));
    }
    Ok(LinearCountModel { weights: w.as_slice()[..FEATURE_DIM].to_vec(), bias: w[FEATURE_DIM] })
}

/// Predicted count, clamped non-negative.
pub fn estimate_count_regression(model: &LinearCountModel, f: &BlockFeatures) -> f64 {
    let dot: f64 = model.weights.iter().zip(f.as_slice()).map(|(w, x)| w * x).sum();
    (dot + model.bias).max(0.0)
}

// ---------------------------------------------------------------------------
// Embedding-provider SVR path
// ---------------------------------------------------------------------------

/// Supplies externally computed per-frame embedding vectors. The engine never
/// runs a neural network; embeddings arrive from sidecar files or any
/// in-process source.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embedding(&self, frame_index: u32) -> Result<Vec<f64>>;
}

/// Reads `frame_%06d.emb` sidecar files: a little-endian u32 length prefix
/// followed by that many little-endian f64 values.
pub struct SidecarEmbeddings {
    dir: std::path::PathBuf,
    dim: usize,
}

impl SidecarEmbeddings {
    pub fn new(dir: impl Into<std::path::PathBuf>, dim: usize) -> Self {
        SidecarEmbeddings { dir: dir.into(), dim }
    }

    pub fn write(path: &Path, values: &[f64]) -> Result<()> {
        let mut bytes = Vec::with_capacity(4 + values.len() * 8);
        bytes.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn sidecar_name(frame_index: u32) -> String {
        format!("frame_{frame_index:06}.emb")
    }
}

impl EmbeddingProvider for SidecarEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embedding(&self, frame_index: u32) -> Result<Vec<f64>> {
        let path = self.dir.join(Self::sidecar_name(frame_index));
        let bytes = std::fs::read(&path)?;
        if bytes.len() < 4 {
            return Err(Error::Format { path, reason: "missing length prefix".into() });
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        if bytes.len() != 4 + len * 8 {
            return Err(Error::Format {
                path,
                reason: format!("expected {} bytes of payload, found {}", len * 8, bytes.len() - 4),
            });
        }
        if len != self.dim {
            return Err(Error::Format {
                path,
                reason: format!("embedding dim {len} does not match configured {}", self.dim),
            });
        }
        Ok(bytes[4..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// ε-insensitive linear-kernel support vector regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCountModel {
    pub embedding_dim: usize,
    pub support_vectors: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub tol: f64,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig { c: 10.0, epsilon: 0.5, max_epochs: 20_000, tol: 1e-12 }
    }
}

/// Trains ε-SVR with a linear kernel by cyclic coordinate descent on the
/// dual variables β_i ∈ [-C, C]; the bias is handled by feature
/// augmentation, making the pass deterministic and solver-free.
pub fn train_svr(x: &[Vec<f64>], y: &[f64], cfg: &SvrConfig) -> Result<EmbeddingCountModel> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Train("empty or mismatched SVR training data".into()));
    }
    let dim = x[0].len();
    if x.iter().any(|v| v.len() != dim) {
        return Err(Error::Train("embedding vectors must share one dimension".into()));
    }
    let n = x.len();
    // augmented self-kernel diagonal: ||x||^2 + 1
    let q_diag: Vec<f64> = x.iter().map(|v| v.iter().map(|a| a * a).sum::<f64>() + 1.0).collect();
    let mut beta = vec![0f64; n];
    // w lives in augmented space: last entry is the bias
    let mut w = vec![0f64; dim + 1];
    for _ in 0..cfg.max_epochs {
        let mut max_delta = 0f64;
        for i in 0..n {
            let f_i: f64 =
                x[i].iter().zip(&w[..dim]).map(|(a, b)| a * b).sum::<f64>() + w[dim];
            // subgradient step in the dual: projected exact minimization of
            // the one-variable objective with the epsilon-insensitive term
            let resid = y[i] - f_i;
            let grad_pos = -resid + cfg.epsilon; // derivative for beta_i > 0 direction
            let grad_neg = -resid - cfg.epsilon;
            let step = if beta[i] > 0.0 || (beta[i] == 0.0 && grad_pos < 0.0) {
                -grad_pos / q_diag[i]
            } else if beta[i] < 0.0 || (beta[i] == 0.0 && grad_neg > 0.0) {
                -grad_neg / q_diag[i]
            } else {
                0.0
            };
            if step == 0.0 {
                continue;
            }
            let old = beta[i];
            let mut new = old + step;
            // do not step across zero in one move: the loss kink sits there
            if old > 0.0 && new < 0.0 || old < 0.0 && new > 0.0 {
                new = 0.0;
            }
            new = new.clamp(-cfg.c, cfg.c);
            let delta = new - old;
            if delta != 0.0 {
                beta[i] = new;
                for (wk, xk) in w[..dim].iter_mut().zip(&x[i]) {
                    *wk += delta * xk;
                }
                w[dim] += delta;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < cfg.tol {
            break;
        }
    }
    let mut support_vectors = Vec::new();
    let mut coefficients = Vec::new();
    for i in 0..n {
        if beta[i] != 0.0 {
            support_vectors.push(x[i].clone());
            coefficients.push(beta[i]);
        }
    }
    Ok(EmbeddingCountModel { embedding_dim: dim, support_vectors, coefficients, bias: w[dim] })
}

/// SVR prediction, clamped non-negative.
pub fn estimate_count_svr(model: &EmbeddingCountModel, embedding: &[f64]) -> Result<f64> {
    if embedding.len() != model.embedding_dim {
        return Err(Error::Validation(format!(
            "embedding dim {} does not match model dim {}",
            embedding.len(),
            model.embedding_dim
        )));
    }
    let mut acc = model.bias;
    for (sv, &c) in model.support_vectors.iter().zip(&model.coefficients) {
        let dot: f64 = sv.iter().zip(embedding).map(|(a, b)| a * b).sum();
        acc += c * dot;
    }
    Ok(acc.max(0.0))
}
