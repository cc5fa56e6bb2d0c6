//! Shared domain types: frames, boxes, ground truth, and the perspective map.

mod annotations;
mod config;
mod pgm;

pub use annotations::{load_annotations, write_annotations};
pub use config::StreamConfig;
pub use pgm::{frame_file_name, load_frame_sequence, read_pgm, write_pgm, FrameStream};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum frame edge accepted by [`Frame::new`].
pub const MIN_FRAME_DIM: u32 = 64;

/// Default minimum side length for a person box, in pixels.
pub const DEFAULT_MIN_BOX_PX: u32 = 30;

/// A single grayscale frame. Pixels are stored row-major, one byte each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    /// 0-based ordinal within the stream.
    pub index: u32,
    /// Milliseconds from stream start.
    pub timestamp_ms: u64,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>, index: u32, timestamp_ms: u64) -> Result<Self> {
        if width < MIN_FRAME_DIM || height < MIN_FRAME_DIM {
            return Err(Error::Validation(format!(
                "frame dimensions {width}x{height} below minimum {MIN_FRAME_DIM}"
            )));
        }
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(Error::Validation(format!(
                "pixel buffer length {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Frame { width, height, pixels, index, timestamp_ms })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Timestamp for frame `index` in a stream running at `fps`.
    pub fn timestamp_for(index: u32, fps: f64) -> u64 {
        (index as f64 * 1000.0 / fps).round() as u64
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Roi {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Roi { x, y, w, h }
    }

    pub fn min_side(&self) -> u32 {
        self.w.min(self.h)
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x as f64
            && px < (self.x + self.w) as f64
            && py >= self.y as f64
            && py < (self.y + self.h) as f64
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }

    /// Intersection-over-union of two rectangles.
    pub fn iou(&self, other: &Roi) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = (x1 - x0) as f64 * (y1 - y0) as f64;
        let union = self.area() as f64 + other.area() as f64 - inter;
        inter / union
    }
}

/// The three annotated person-part classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxClass {
    FullBody,
    HeadShoulders,
    Head,
}

impl BoxClass {
    pub const ALL: [BoxClass; 3] = [BoxClass::FullBody, BoxClass::HeadShoulders, BoxClass::Head];

    pub fn name(&self) -> &'static str {
        match self {
            BoxClass::FullBody => "full_body",
            BoxClass::HeadShoulders => "head_shoulders",
            BoxClass::Head => "head",
        }
    }
}

/// A classed, scored detection rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub roi: Roi,
    pub class: BoxClass,
    /// Confidence in [0,1].
    pub score: f64,
}

/// Per-row weighting compensating for perspective: distant rows (small y)
/// may count more than near rows. The weight ramps linearly from
/// `weight_top` at row 0 to `weight_bottom` at the last row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveMap {
    pub weight_top: f64,
    pub weight_bottom: f64,
    pub height: u32,
}

impl PerspectiveMap {
    pub fn new(weight_top: f64, weight_bottom: f64, height: u32) -> Result<Self> {
        if !(weight_top > 0.0) || !(weight_bottom > 0.0) {
            return Err(Error::Validation(format!(
                "perspective weights must be positive, got top={weight_top} bottom={weight_bottom}"
            )));
        }
        if height < 2 {
            return Err(Error::Validation("perspective map needs at least 2 rows".into()));
        }
        Ok(PerspectiveMap { weight_top, weight_bottom, height })
    }

    /// Identity map: every row weighs 1.
    pub fn unit(height: u32) -> Self {
        PerspectiveMap { weight_top: 1.0, weight_bottom: 1.0, height }
    }

    /// w(y) = weight_top + (weight_bottom - weight_top) * y / (height - 1)
    #[inline]
    pub fn weight(&self, y: u32) -> f64 {
        debug_assert!(y < self.height);
        self.weight_top + (self.weight_bottom - self.weight_top) * y as f64 / (self.height - 1) as f64
    }

    pub fn max_weight(&self) -> f64 {
        self.weight_top.max(self.weight_bottom)
    }
}

/// Per-frame annotation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame_index: u32,
    pub count: u32,
    pub boxes: Vec<DetectionBox>,
    pub incident: bool,
    pub flow_in: u32,
    pub flow_out: u32,
}

impl GroundTruth {
    pub fn empty(frame_index: u32) -> Self {
        GroundTruth { frame_index, count: 0, boxes: Vec::new(), incident: false, flow_in: 0, flow_out: 0 }
    }
}
