//! Adaptive fusion of detection-based and regression-based counts.
//!
//! Detected persons are counted directly; regression features are then
//! extracted only from the regions without detections, and the regressed
//! residual is added on top. Detection dominates sparse scenes (residual
//! features shrink toward zero), regression dominates dense ones.

use crate::detect::{self, BoostedModel, DetectorConfig};
use crate::error::Result;
use crate::model::{DetectionBox, Frame, PerspectiveMap};
use crate::regress::{self, BlockFeatures, LinearCountModel};
use crate::segment::BinaryMask;

/// One frame's fused count estimate.
#[derive(Debug, Clone)]
pub struct FusedEstimate {
    pub detected: u32,
    pub regressed_residual: f64,
    pub total: f64,
    pub detection_boxes: Vec<DetectionBox>,
}

#[derive(Debug, Clone, Default)]
pub struct FusionConfig {
    pub detector: DetectorConfig,
    /// Scale pyramid handed to the detector; empty means the default ladder
    /// for the frame height.
    pub scales: Vec<f64>,
    /// Gate detector windows on the foreground mask. Skips work where
    /// nothing moves; the ungated path is the spec-pure reference.
    pub use_fg_gate: bool,
}

/// Runs detection, masks the detected regions out of the regression
/// features, and returns `detected + regressed_residual`.
///
/// `reg_model` must have been trained on features masked the same way.
pub fn fuse_count(
    frame: &Frame,
    fg: &BinaryMask,
    edges: &BinaryMask,
    det_models: &[BoostedModel],
    reg_model: &LinearCountModel,
    pmap: &PerspectiveMap,
    cfg: &FusionConfig,
) -> Result<FusedEstimate> {
    let default_scales;
    let scales = if cfg.scales.is_empty() {
        default_scales = detect::default_scales(frame.height, &cfg.detector);
        &default_scales
    } else {
        &cfg.scales
    };
    let boxes = if det_models.is_empty() {
        Vec::new()
    } else {
        detect::detect_gated(
            frame,
            det_models,
            scales,
            &cfg.detector,
            if cfg.use_fg_gate { Some(fg) } else { None },
        )
    };
    let detected = detect::count_by_detection(&boxes);
    let features = residual_features(fg, edges, pmap, &boxes)?;
    let regressed_residual = regress::estimate_count_regression(reg_model, &features);
    Ok(FusedEstimate {
        detected,
        regressed_residual,
        total: detected as f64 + regressed_residual,
        detection_boxes: boxes,
    })
}

/// Block features with every detection box excluded — the feature map the
/// fusion regressor is trained and evaluated on.
pub fn residual_features(
    fg: &BinaryMask,
    edges: &BinaryMask,
    pmap: &PerspectiveMap,
    boxes: &[DetectionBox],
) -> Result<BlockFeatures> {
    let exclusions: Vec<_> = boxes.iter().map(|b| b.roi).collect();
    regress::extract_block_features(fg, edges, pmap, &exclusions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoxClass, Roi};
    use crate::regress::FEATURE_DIM;

    fn blank_frame() -> Frame {
        Frame::new(96, 96, vec![100; 96 * 96], 0, 0).unwrap()
    }

    #[test]
    fn empty_scene_zero_total() {
        let frame = blank_frame();
        let fg = BinaryMask::new(96, 96);
        let edges = BinaryMask::new(96, 96);
        let pmap = PerspectiveMap::unit(96);
        let reg = LinearCountModel::zero();
        let est =
            fuse_count(&frame, &fg, &edges, &[], &reg, &pmap, &FusionConfig::default()).unwrap();
        assert_eq!(est.detected, 0);
        assert_eq!(est.regressed_residual, 0.0);
        assert_eq!(est.total, 0.0);
    }

    #[test]
    fn zero_regressor_reduces_to_detection_count() {
        // With a zero regression model the fused total equals the detected
        // count exactly, whatever the masks say.
        let frame = blank_frame();
        let fg = BinaryMask::from_bits(96, 96, vec![true; 96 * 96]);
        let edges = BinaryMask::new(96, 96);
        let pmap = PerspectiveMap::unit(96);
        let reg = LinearCountModel::zero();
        let est =
            fuse_count(&frame, &fg, &edges, &[], &reg, &pmap, &FusionConfig::default()).unwrap();
        assert_eq!(est.total, est.detected as f64);
    }

    #[test]
    fn empty_detector_reduces_to_plain_regression() {
        let frame = blank_frame();
        let fg = BinaryMask::from_bits(96, 96, vec![true; 96 * 96]);
        let edges = BinaryMask::new(96, 96);
        let pmap = PerspectiveMap::unit(96);
        let mut reg = LinearCountModel::zero();
        reg.weights = vec![1.0; FEATURE_DIM];
        reg.bias = 0.5;
        let est =
            fuse_count(&frame, &fg, &edges, &[], &reg, &pmap, &FusionConfig::default()).unwrap();
        let plain = regress::estimate_count_regression(
            &reg,
            &regress::extract_block_features(&fg, &edges, &pmap, &[]).unwrap(),
        );
        assert_eq!(est.total, plain);
        assert_eq!(est.detected, 0);
    }

    #[test]
    fn total_at_least_detected() {
        let boxes = vec![DetectionBox {
            roi: Roi::new(10, 10, 32, 64),
            class: BoxClass::FullBody,
            score: 0.9,
        }];
        let fg = BinaryMask::from_bits(96, 96, vec![true; 96 * 96]);
        let edges = BinaryMask::new(96, 96);
        let pmap = PerspectiveMap::unit(96);
        let f = residual_features(&fg, &edges, &pmap, &boxes).unwrap();
        let mut reg = LinearCountModel::zero();
        reg.bias = -100.0; // clamp keeps the residual non-negative
        let residual = regress::estimate_count_regression(&reg, &f);
        assert!(residual >= 0.0);
    }
}
