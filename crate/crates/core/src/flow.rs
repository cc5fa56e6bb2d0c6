//! Aggregate-flow incident branch: pyramidal block-matching optical flow and
//! per-block orientation histograms.

use crate::detect::Plane;
use crate::error::{Error, Result};
use crate::ml::LinearSvmModel;

/// Per-pixel 2-D motion field between two frames of equal size.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.u.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .u
            .iter()
            .zip(&self.v)
            .map(|(&u, &v)| ((u * u + v * v) as f64).sqrt())
            .sum();
        sum / self.u.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Pyramid depth; each level halves the resolution.
    pub levels: usize,
    /// Matching block edge in pixels.
    pub block: usize,
    /// Integer search radius per level.
    pub radius: i32,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { levels: 3, block: 8, radius: 7 }
    }
}

fn downsample_half(p: &Plane) -> Plane {
    let nw = (p.w / 2).max(1);
    let nh = (p.h / 2).max(1);
    let mut data = vec![0u8; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            let (x0, y0) = (x * 2, y * 2);
            let x1 = (x0 + 1).min(p.w - 1);
            let y1 = (y0 + 1).min(p.h - 1);
            let sum = p.get(x0, y0) as u32
                + p.get(x1, y0) as u32
                + p.get(x0, y1) as u32
                + p.get(x1, y1) as u32;
            data[y * nw + x] = ((sum + 2) / 4) as u8;
        }
    }
    Plane::new(nw, nh, data)
}

#[inline]
fn sad(prev: &Plane, next: &Plane, px: usize, py: usize, qx: usize, qy: usize, bw: usize, bh: usize) -> u32 {
    let mut acc = 0u32;
    for dy in 0..bh {
        let prow = (py + dy) * prev.w + px;
        let qrow = (qy + dy) * next.w + qx;
        for dx in 0..bw {
            let a = prev.data[prow + dx] as i32;
            let b = next.data[qrow + dx] as i32;
            acc += (a - b).unsigned_abs();
        }
    }
    acc
}

/// Per-block displacement grid at one pyramid level.
struct BlockGrid {
    bw: usize,
    bh: usize,
    u: Vec<i32>,
    v: Vec<i32>,
}

fn match_level(prev: &Plane, next: &Plane, init: Option<&BlockGrid>, cfg: &FlowConfig) -> BlockGrid {
    let block = cfg.block;
    let bw = prev.w.div_ceil(block);
    let bh = prev.h.div_ceil(block);
    let mut grid = BlockGrid { bw, bh, u: vec![0; bw * bh], v: vec![0; bw * bh] };
    for by in 0..bh {
        for bx in 0..bw {
            let x0 = bx * block;
            let y0 = by * block;
            let w = block.min(prev.w - x0);
            let h = block.min(prev.h - y0);
            // seed from the coarser level through the block-center mapping
            let (mut iu, mut iv) = (0i32, 0i32);
            if let Some(parent) = init {
                let cx = (x0 + w / 2) / 2;
                let cy = (y0 + h / 2) / 2;
                let pbx = (cx / block).min(parent.bw - 1);
                let pby = (cy / block).min(parent.bh - 1);
                iu = parent.u[pby * parent.bw + pbx] * 2;
                iv = parent.v[pby * parent.bw + pbx] * 2;
            }
            // clamp the seed so the search window contains valid candidates
            iu = iu.clamp(-(x0 as i32), (next.w - w - x0) as i32);
            iv = iv.clamp(-(y0 as i32), (next.h - h - y0) as i32);

            // search around the pyramid predictor AND the zero-motion
            // candidate: a wrong coarse estimate (aperture ambiguity on
            // smooth texture) must not be able to hide the true match
            let mut best = (u32::MAX, i64::MAX, i32::MAX, i32::MAX); // (sad, mag2, u, v)
            let predictors: &[(i32, i32)] =
                if (iu, iv) == (0, 0) { &[(0, 0)] } else { &[(0, 0), (iu, iv)] };
            for &(pu, pv) in predictors {
                for dv in -cfg.radius..=cfg.radius {
                    let qy = y0 as i32 + pv + dv;
                    if qy < 0 || qy as usize + h > next.h {
                        continue;
                    }
                    for du in -cfg.radius..=cfg.radius {
                        let qx = x0 as i32 + pu + du;
                        if qx < 0 || qx as usize + w > next.w {
                            continue;
                        }
                        let cost = sad(prev, next, x0, y0, qx as usize, qy as usize, w, h);
                        let (cu, cv) = (pu + du, pv + dv);
                        let mag2 = (cu as i64) * (cu as i64) + (cv as i64) * (cv as i64);
                        let key = (cost, mag2, cu, cv);
                        if key < best {
                            best = key;
                        }
                    }
                }
            }
            grid.u[by * bw + bx] = best.2;
            grid.v[by * bw + bx] = best.3;
        }
    }
    grid
}

/// Pyramidal block-matching flow from `prev` to `next`.
///
/// Ties in the SAD cost break toward the smallest displacement magnitude,
/// then lexicographically by (u, v), so the result is fully deterministic.
pub fn optical_flow(prev: &Plane, next: &Plane, cfg: &FlowConfig) -> Result<FlowField> {
    if prev.w != next.w || prev.h != next.h {
        return Err(Error::Stream(format!(
            "flow frame dimensions differ: {}x{} vs {}x{}",
            prev.w, prev.h, next.w, next.h
        )));
    }
    // build pyramids
    let mut pyr_prev = vec![prev.clone()];
    let mut pyr_next = vec![next.clone()];
    for _ in 1..cfg.levels {
        let p = downsample_half(pyr_prev.last().unwrap());
        let n = downsample_half(pyr_next.last().unwrap());
        if p.w < cfg.block || p.h < cfg.block {
            break;
        }
        pyr_prev.push(p);
        pyr_next.push(n);
    }
    let mut grid: Option<BlockGrid> = None;
    for level in (0..pyr_prev.len()).rev() {
        grid = Some(match_level(&pyr_prev[level], &pyr_next[level], grid.as_ref(), cfg));
    }
    let grid = grid.unwrap();
    let mut field = FlowField {
        width: prev.w,
        height: prev.h,
        u: vec![0.0; prev.w * prev.h],
        v: vec![0.0; prev.w * prev.h],
    };
    for y in 0..prev.h {
        let by = (y / cfg.block).min(grid.bh - 1);
        for x in 0..prev.w {
            let bx = (x / cfg.block).min(grid.bw - 1);
            let i = y * prev.w + x;
            field.u[i] = grid.u[by * grid.bw + bx] as f32;
            field.v[i] = grid.v[by * grid.bw + bx] as f32;
        }
    }
    Ok(field)
}

/// Default spatial grid for flow histograms (columns x rows).
pub const DEFAULT_FLOW_GRID: (usize, usize) = (8, 6);
/// Orientation bins over [0°, 360°).
pub const FLOW_ORIENT_BINS: usize = 8;
/// Entries per block: orientation bins plus one mean-magnitude slot.
pub const FLOW_BLOCK_DIM: usize = FLOW_ORIENT_BINS + 1;

/// Concatenated per-block flow histograms: for every block, eight
/// magnitude-weighted orientation bins plus the mean magnitude over all of
/// the block's pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowHistogramFeature {
    pub grid_w: usize,
    pub grid_h: usize,
    pub values: Vec<f64>,
}

impl FlowHistogramFeature {
    pub fn dim(grid_w: usize, grid_h: usize) -> usize {
        grid_w * grid_h * FLOW_BLOCK_DIM
    }
}

/// Accumulates the per-block histograms. Vectors below `min_mag` contribute
/// to no orientation bin but still enter the mean-magnitude entry.
pub fn flow_histogram_feature(
    field: &FlowField,
    grid_w: usize,
    grid_h: usize,
    min_mag: f64,
) -> FlowHistogramFeature {
    assert!(grid_w > 0 && grid_h > 0);
    let mut values = vec![0f64; FlowHistogramFeature::dim(grid_w, grid_h)];
    let mut block_pixels = vec![0u64; grid_w * grid_h];
    for y in 0..field.height {
        let by = y * grid_h / field.height;
        for x in 0..field.width {
            let bx = x * grid_w / field.width;
            let block = by * grid_w + bx;
            let (u, v) = field.at(x, y);
            let mag = ((u as f64).powi(2) + (v as f64).powi(2)).sqrt();
            block_pixels[block] += 1;
            values[block * FLOW_BLOCK_DIM + FLOW_ORIENT_BINS] += mag;
            if mag >= min_mag {
                let mut deg = (v as f64).atan2(u as f64).to_degrees();
                if deg < 0.0 {
                    deg += 360.0;
                }
                let bin = ((deg / 45.0) as usize).min(FLOW_ORIENT_BINS - 1);
                values[block * FLOW_BLOCK_DIM + bin] += mag;
            }
        }
    }
    for block in 0..grid_w * grid_h {
        if block_pixels[block] > 0 {
            values[block * FLOW_BLOCK_DIM + FLOW_ORIENT_BINS] /= block_pixels[block] as f64;
        }
    }
    FlowHistogramFeature { grid_w, grid_h, values }
}

/// Raw SVM margin of the flow branch for one feature vector.
pub fn score_flow_branch(feature: &FlowHistogramFeature, model: &LinearSvmModel) -> Result<f64> {
    model.margin_checked(&feature.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Band-limited texture: bilinear value noise on an 8-px lattice. White
    /// noise aliases under pyramid downsampling; real frames do not.
    fn textured_plane(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let cell = 8usize;
        let gw = w / cell + 2;
        let gh = h / cell + 2;
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(0.0..255.0)).collect();
        let mut data = vec![0u8; w * h];
        for y in 0..h {
            let (gy, fy) = (y / cell, (y % cell) as f64 / cell as f64);
            for x in 0..w {
                let (gx, fx) = (x / cell, (x % cell) as f64 / cell as f64);
                let v = lattice[gy * gw + gx] * (1.0 - fx) * (1.0 - fy)
                    + lattice[gy * gw + gx + 1] * fx * (1.0 - fy)
                    + lattice[(gy + 1) * gw + gx] * (1.0 - fx) * fy
                    + lattice[(gy + 1) * gw + gx + 1] * fx * fy;
                data[y * w + x] = v.round() as u8;
            }
        }
        Plane::new(w, h, data)
    }

    fn white_noise_plane(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut data = vec![0u8; w * h];
        rng.fill(&mut data[..]);
        Plane::new(w, h, data)
    }

    #[test]
    fn identical_frames_zero_field() {
        let p = textured_plane(128, 96, 1);
        let f = optical_flow(&p, &p, &FlowConfig::default()).unwrap();
        assert!(f.u.iter().all(|&u| u == 0.0));
        assert!(f.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_translation_recovered_in_interior() {
        let p = textured_plane(128, 96, 2);
        // shift content right by 3: next(x, y) = prev(x - 3, y)
        let mut data = vec![0u8; 128 * 96];
        for y in 0..96 {
            for x in 0..128 {
                let sx = if x >= 3 { x - 3 } else { 0 };
                data[y * 128 + x] = p.get(sx, y);
            }
        }
        let n = Plane::new(128, 96, data);
        let f = optical_flow(&p, &n, &FlowConfig::default()).unwrap();
        // interior blocks only: skip one block border
        for y in 8..88 {
            for x in 8..120 {
                let (u, v) = f.at(x, y);
                assert_eq!((u, v), (3.0, 0.0), "at ({x},{y})");
            }
        }
    }

    #[test]
    fn noise_pair_stays_finite() {
        let a = white_noise_plane(96, 96, 3);
        let b = white_noise_plane(96, 96, 4);
        let f = optical_flow(&a, &b, &FlowConfig::default()).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|v| v.is_finite()));
        let _ = f.mean_magnitude();
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = white_noise_plane(96, 96, 5);
        let b = white_noise_plane(64, 96, 6);
        assert!(optical_flow(&a, &b, &FlowConfig::default()).is_err());
    }

    #[test]
    fn zero_field_zero_feature() {
        let field =
            FlowField { width: 64, height: 48, u: vec![0.0; 64 * 48], v: vec![0.0; 64 * 48] };
        let feat = flow_histogram_feature(&field, 8, 6, 0.5);
        assert!(feat.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_field_single_bin() {
        let field =
            FlowField { width: 64, height: 48, u: vec![1.0; 64 * 48], v: vec![0.0; 64 * 48] };
        let feat = flow_histogram_feature(&field, 8, 6, 0.5);
        let block_px = (64 / 8) * (48 / 6);
        for block in 0..48 {
            let base = block * FLOW_BLOCK_DIM;
            assert_eq!(feat.values[base], block_px as f64, "bin 0 of block {block}");
            for bin in 1..FLOW_ORIENT_BINS {
                assert_eq!(feat.values[base + bin], 0.0);
            }
            assert!((feat.values[base + FLOW_ORIENT_BINS] - 1.0).abs() < 1e-12);
        }
    }

    /// Brute-force per-pixel accumulation oracle.
    fn histogram_oracle(field: &FlowField, gw: usize, gh: usize, min_mag: f64) -> Vec<f64> {
        let mut values = vec![0f64; gw * gh * FLOW_BLOCK_DIM];
        let mut counts = vec![0u64; gw * gh];
        for y in 0..field.height {
            for x in 0..field.width {
                let bx = x * gw / field.width;
                let by = y * gh / field.height;
                let block = by * gw + bx;
                let (u, v) = field.at(x, y);
                let mag = ((u as f64).powi(2) + (v as f64).powi(2)).sqrt();
                counts[block] += 1;
                values[block * FLOW_BLOCK_DIM + FLOW_ORIENT_BINS] += mag;
                if mag >= min_mag {
                    let mut deg = (v as f64).atan2(u as f64).to_degrees();
                    if deg < 0.0 {
                        deg += 360.0;
                    }
                    let bin = ((deg / 45.0) as usize).min(7);
                    values[block * FLOW_BLOCK_DIM + bin] += mag;
                }
            }
        }
        for b in 0..gw * gh {
            if counts[b] > 0 {
                values[b * FLOW_BLOCK_DIM + FLOW_ORIENT_BINS] /= counts[b] as f64;
            }
        }
        values
    }

    #[test]
    fn random_field_matches_oracle_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let (w, h) = (97usize, 53usize); // awkward sizes on purpose
        let field = FlowField {
            width: w,
            height: h,
            u: (0..w * h).map(|_| rng.gen_range(-5.0f32..5.0)).collect(),
            v: (0..w * h).map(|_| rng.gen_range(-5.0f32..5.0)).collect(),
        };
        let feat = flow_histogram_feature(&field, 8, 6, 0.5);
        let oracle = histogram_oracle(&field, 8, 6, 0.5);
        assert_eq!(feat.values.len(), oracle.len());
        for (i, (a, b)) in feat.values.iter().zip(&oracle).enumerate() {
            assert_eq!(a, b, "entry {i}");
        }
    }

    #[test]
    fn subthreshold_noise_touches_only_mean_entries() {
        let (w, h) = (64usize, 48usize);
        let clean =
            FlowField { width: w, height: h, u: vec![2.0; w * h], v: vec![0.0; w * h] };
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut noisy = clean.clone();
        // replace a scattering of pixels with sub-threshold vectors
        for _ in 0..500 {
            let i = rng.gen_range(0..w * h);
            noisy.u[i] = rng.gen_range(-0.4f32..0.4);
            noisy.v[i] = rng.gen_range(-0.3f32..0.3);
        }
        let a = flow_histogram_feature(&clean, 8, 6, 0.5);
        let b = flow_histogram_feature(&noisy, 8, 6, 0.5);
        for block in 0..48 {
            let base = block * FLOW_BLOCK_DIM;
            for bin in 0..FLOW_ORIENT_BINS {
                // bins only ever lose the replaced pixels' mass
                assert!(b.values[base + bin] <= a.values[base + bin]);
            }
        }
    }

    #[test]
    fn score_checks_dimension() {
        let field =
            FlowField { width: 64, height: 48, u: vec![0.0; 64 * 48], v: vec![0.0; 64 * 48] };
        let feat = flow_histogram_feature(&field, 8, 6, 0.5);
        let model = LinearSvmModel::raw(vec![0.0; feat.values.len()], 0.0);
        assert_eq!(score_flow_branch(&feat, &model).unwrap(), 0.0);
        let wrong = LinearSvmModel::raw(vec![0.0; 3], 0.0);
        assert!(score_flow_branch(&feat, &wrong).is_err());
    }
}
