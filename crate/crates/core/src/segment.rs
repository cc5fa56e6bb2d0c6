//! Foreground segmentation against a running-average background model, plus
//! the Sobel edge map consumed by regression counting.

use crate::error::{Error, Result};
use crate::model::Frame;

/// A per-pixel boolean mask sharing dimensions with its source frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        BinaryMask { width, height, bits }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Intersection-over-union against another mask of the same dimensions.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// 0/255 PGM bytes for debug dumps.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SegmentationConfig {
    /// Exponential update rate of the background mean.
    pub learning_rate: f64,
    /// Absolute intensity difference that marks a pixel foreground.
    pub diff_threshold: f64,
    /// One pass of a 3x3 majority filter on the raw mask.
    pub majority_filter: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig { learning_rate: 0.01, diff_threshold: 25.0, majority_filter: true }
    }
}

/// Per-pixel running-average background with a fixed learning rate.
///
/// Single-writer: exactly one updater per stream.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    mean: Vec<f64>,
    width: u32,
    height: u32,
    cfg: SegmentationConfig,
    initialized: bool,
}

impl BackgroundModel {
    pub fn new(width: u32, height: u32, cfg: SegmentationConfig) -> Self {
        assert!(cfg.learning_rate > 0.0 && cfg.learning_rate < 1.0);
        BackgroundModel {
            mean: vec![0.0; width as usize * height as usize],
            width,
            height,
            cfg,
            initialized: false,
        }
    }

    pub fn config(&self) -> &SegmentationConfig {
        &self.cfg
    }

    /// Segments `frame` against the current mean, then folds the frame into
    /// the mean. The mask is computed before the update. The first frame
    /// initializes the mean and returns an all-background mask.
    pub fn update_and_segment(&mut self, frame: &Frame) -> Result<BinaryMask> {
        if (frame.width, frame.height) != (self.width, self.height) {
            return Err(Error::Stream(format!(
                "frame {}x{} does not match background model {}x{}",
                frame.width, frame.height, self.width, self.height
            )));
        }
        let n = self.mean.len();
        if !self.initialized {
            for i in 0..n {
                self.mean[i] = frame.pixels[i] as f64;
            }
            self.initialized = true;
            return Ok(BinaryMask::new(self.width, self.height));
        }
        let mut bits = vec![false; n];
        let alpha = self.cfg.learning_rate;
        let thr = self.cfg.diff_threshold;
        for i in 0..n {
            let px = frame.pixels[i] as f64;
            bits[i] = (px - self.mean[i]).abs() > thr;
            self.mean[i] = (1.0 - alpha) * self.mean[i] + alpha * px;
        }
        let mut mask = BinaryMask::from_bits(self.width, self.height, bits);
        if self.cfg.majority_filter {
            mask = majority_filter_3x3(&mask);
        }
        Ok(mask)
    }
}

/// One pass of a 3x3 majority vote: the output pixel is set iff a strict
/// majority of its window (clipped at borders) is set.
pub fn majority_filter_3x3(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = BinaryMask::new(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            let mut set = 0u32;
            let mut total = 0u32;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && nx < w && ny >= 0 && ny < h {
                        total += 1;
                        set += mask.get(nx as u32, ny as u32) as u32;
                    }
                }
            }
            out.set(x as u32, y as u32, set * 2 > total);
        }
    }
    out
}

/// Sobel edge map: a pixel is set iff |gx| + |gy| exceeds `threshold`.
/// The 1-px border is always unset.
pub fn edge_map(frame: &Frame, threshold: i32) -> BinaryMask {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut mask = BinaryMask::new(frame.width, frame.height);
    let px = &frame.pixels;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let (a, b, c) = (px[i - w - 1] as i32, px[i - w] as i32, px[i - w + 1] as i32);
            let (d, f) = (px[i - 1] as i32, px[i + 1] as i32);
            let (g, hh, k) = (px[i + w - 1] as i32, px[i + w] as i32, px[i + w + 1] as i32);
            let gx = (c + 2 * f + k) - (a + 2 * d + g);
            let gy = (g + 2 * hh + k) - (a + 2 * b + c);
            if gx.abs() + gy.abs() > threshold {
                mask.set(x as u32, y as u32, true);
            }
        }
    }
    mask
}

/// Default edge threshold used by the counting pipeline.
pub const DEFAULT_EDGE_THRESHOLD: i32 = 80;
