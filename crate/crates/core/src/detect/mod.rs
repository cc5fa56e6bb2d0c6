//! Counting-by-detection: sliding-window evaluation of boosted channel-feature
//! classifiers over a scale pyramid, with greedy non-maximum suppression.

pub mod boost;
pub mod channels;

pub use boost::{default_window, train_boosted, BoostConfig, BoostRound, BoostStats, BoostedModel};
pub use channels::{compute_channels, ChannelStack, Plane, DEFAULT_CELL_SIZE, NUM_CHANNELS};

use crate::model::{BoxClass, DetectionBox, Frame, Roi};
use crate::segment::BinaryMask;

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub cell_size: usize,
    /// Window stride in cells.
    pub stride_cells: usize,
    /// Multiplicative step between pyramid scales.
    pub scale_step: f64,
    /// Detections whose short side falls below this are discarded.
    pub min_box_px: u32,
    /// Overlap at or above which the weaker box is suppressed.
    pub nms_iou: f64,
    /// Minimum fraction of foreground pixels under a window for it to be
    /// evaluated when a foreground mask is supplied.
    pub fg_gate_min_fraction: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            cell_size: DEFAULT_CELL_SIZE,
            stride_cells: 2,
            scale_step: 1.25,
            min_box_px: 30,
            nms_iou: 0.5,
            fg_gate_min_fraction: 0.02,
        }
    }
}

/// Scale ladder from 1.0 up to `frame_h / reference_window_h`, descending so
/// the coarsest level (largest boxes) is searched first.
pub fn default_scales(frame_h: u32, cfg: &DetectorConfig) -> Vec<f64> {
    let max_scale = frame_h as f64 / default_window(BoxClass::FullBody).1 as f64;
    let mut scales = Vec::new();
    let mut s = 1.0;
    while s <= max_scale {
        scales.push(s);
        s *= cfg.scale_step;
    }
    scales.reverse();
    scales
}

struct Candidate {
    roi: Roi,
    class: BoxClass,
    margin: f64,
}

/// Runs every model over the scale pyramid and returns NMS-filtered boxes
/// with scores mapped to [0,1] through a logistic of the raw margin.
pub fn detect(
    frame: &Frame,
    models: &[BoostedModel],
    scales: &[f64],
    cfg: &DetectorConfig,
) -> Vec<DetectionBox> {
    detect_gated(frame, models, scales, cfg, None)
}

/// [`detect`] with an optional foreground gate: windows whose native-space
/// footprint holds fewer than `fg_gate_min_fraction` foreground pixels are
/// skipped. Gating can only drop boxes relative to the ungated detector.
pub fn detect_gated(
    frame: &Frame,
    models: &[BoostedModel],
    scales: &[f64],
    cfg: &DetectorConfig,
    fg: Option<&BinaryMask>,
) -> Vec<DetectionBox> {
    detect_scored(frame, models, scales, cfg, fg)
        .into_iter()
        .map(|(b, _)| b)
        .collect()
}

/// [`detect_gated`] that also exposes each kept box's raw ensemble margin;
/// used for operating-point calibration.
pub fn detect_scored(
    frame: &Frame,
    models: &[BoostedModel],
    scales: &[f64],
    cfg: &DetectorConfig,
    fg: Option<&BinaryMask>,
) -> Vec<(DetectionBox, f64)> {
    assert!(!scales.is_empty(), "scales must be non-empty");
    let plane = Plane::from(frame);
    let fg_integral = fg.map(mask_integral);
    let mut per_class: Vec<Vec<Candidate>> = vec![Vec::new(), Vec::new(), Vec::new()];

    for &scale in scales {
        let lw = (frame.width as f64 / scale).round() as usize;
        let lh = (frame.height as f64 / scale).round() as usize;
        if lw < cfg.cell_size * 4 || lh < cfg.cell_size * 4 {
            continue;
        }
        let level =
            if scale == 1.0 { plane.clone() } else { plane.resize(lw, lh) };
        let stack = compute_channels(&level, cfg.cell_size);
        // windows only over complete cells
        let full_w = level.w / cfg.cell_size;
        let full_h = level.h / cfg.cell_size;
        for model in models {
            let (wc, hc) = model.window_cells();
            if model.cell_size as usize != cfg.cell_size || wc > full_w || hc > full_h {
                continue;
            }
            let native_w = (model.window_w as f64 * scale).round() as u32;
            let native_h = (model.window_h as f64 * scale).round() as u32;
            if native_w.min(native_h) < cfg.min_box_px {
                continue; // a box at this scale would violate the minimum side
            }
            let evaluator = WindowEvaluator::new(model, &stack);
            let class_idx = class_index(model.class);
            let mut cy0 = 0usize;
            while cy0 + hc <= full_h {
                let mut cx0 = 0usize;
                while cx0 + wc <= full_w {
                    let x = ((cx0 * cfg.cell_size) as f64 * scale).round() as u32;
                    let y = ((cy0 * cfg.cell_size) as f64 * scale).round() as u32;
                    let roi = clamp_roi(x, y, native_w, native_h, frame.width, frame.height);
                    let gated_out = match (&fg_integral, fg) {
                        (Some(integral), Some(mask)) => {
                            let covered = rect_sum(integral, mask.width as usize, &roi);
                            (covered as f64) < cfg.fg_gate_min_fraction * roi.area() as f64
                        }
                        _ => false,
                    };
                    if !gated_out {
                        if let Some(margin) =
                            evaluator.margin_at_least(cx0, cy0, model.score_threshold)
                        {
                            per_class[class_idx].push(Candidate {
                                roi,
                                class: model.class,
                                margin,
                            });
                        }
                    }
                    cx0 += cfg.stride_cells;
                }
                cy0 += cfg.stride_cells;
            }
        }
    }

    // Per-class NMS, then one cross-class pass over the survivors.
    let mut survivors: Vec<Candidate> = Vec::new();
    for class_boxes in per_class {
        survivors.extend(nms_candidates(class_boxes, cfg.nms_iou));
    }
    let kept = nms_candidates(survivors, cfg.nms_iou);
    kept.into_iter()
        .map(|c| {
            (
                DetectionBox {
                    roi: c.roi,
                    class: c.class,
                    score: 1.0 / (1.0 + (-c.margin).exp()),
                },
                c.margin,
            )
        })
        .collect()
}

fn class_index(class: BoxClass) -> usize {
    match class {
        BoxClass::FullBody => 0,
        BoxClass::HeadShoulders => 1,
        BoxClass::Head => 2,
    }
}

fn clamp_roi(x: u32, y: u32, w: u32, h: u32, frame_w: u32, frame_h: u32) -> Roi {
    let x = x.min(frame_w.saturating_sub(1));
    let y = y.min(frame_h.saturating_sub(1));
    let w = w.min(frame_w - x);
    let h = h.min(frame_h - y);
    Roi::new(x, y, w, h)
}

/// Precomputed per-(model, level) evaluation plan: flat data offsets for
/// every tree node plus suffix weight sums for an exact early out.
struct WindowEvaluator<'a> {
    data: &'a [f32],
    grid_w: usize,
    nodes: Vec<PlanRound>,
    /// suffix[i] = sum of weights of rounds i.. ; suffix[len] = 0.
    suffix: Vec<f64>,
}

struct PlanRound {
    root_off: usize,
    root_thr: f32,
    child_off: [usize; 2],
    child_thr: [f32; 2],
    leaves: [i8; 4],
    weight: f64,
}

impl<'a> WindowEvaluator<'a> {
    fn new(model: &BoostedModel, stack: &'a ChannelStack) -> Self {
        let (wc, hc) = model.window_cells();
        let stride = stack.channel_stride();
        let to_off = |feature: u32| -> usize {
            let f = feature as usize;
            let ch = f / (wc * hc);
            let rem = f % (wc * hc);
            let cy = rem / wc;
            let cx = rem % wc;
            ch * stride + cy * stack.grid_w + cx
        };
        let nodes = model
            .rounds
            .iter()
            .map(|r| PlanRound {
                root_off: to_off(r.tree.root.feature),
                root_thr: r.tree.root.threshold,
                child_off: [to_off(r.tree.children[0].feature), to_off(r.tree.children[1].feature)],
                child_thr: [r.tree.children[0].threshold, r.tree.children[1].threshold],
                leaves: r.tree.leaves,
                weight: r.weight,
            })
            .collect::<Vec<_>>();
        let mut suffix = vec![0.0; nodes.len() + 1];
        for i in (0..nodes.len()).rev() {
            suffix[i] = suffix[i + 1] + nodes[i].weight;
        }
        WindowEvaluator { data: stack.data(), grid_w: stack.grid_w, nodes, suffix }
    }

    /// Full margin if it can reach `threshold`, `None` otherwise. The early
    /// out is exact: evaluation stops only when even all-positive votes from
    /// the remaining rounds could not lift the margin to the threshold.
    #[inline]
    fn margin_at_least(&self, cx0: usize, cy0: usize, threshold: f64) -> Option<f64> {
        let base = cy0 * self.grid_w + cx0;
        let mut margin = 0.0f64;
        for (i, n) in self.nodes.iter().enumerate() {
            let side = (self.data[base + n.root_off] >= n.root_thr) as usize;
            let sub = (self.data[base + n.child_off[side]] >= n.child_thr[side]) as usize;
            margin += n.weight * n.leaves[side * 2 + sub] as f64;
            if margin + self.suffix[i + 1] < threshold - 1e-9 {
                return None;
            }
        }
        if margin >= threshold {
            Some(margin)
        } else {
            None
        }
    }
}

fn mask_integral(mask: &BinaryMask) -> Vec<u32> {
    let w = mask.width as usize;
    let h = mask.height as usize;
    let mut integral = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0u32;
        for x in 0..w {
            row_sum += mask.bits()[y * w + x] as u32;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row_sum;
        }
    }
    integral
}

fn rect_sum(integral: &[u32], w: usize, roi: &Roi) -> u32 {
    let stride = w + 1;
    let (x0, y0) = (roi.x as usize, roi.y as usize);
    let (x1, y1) = (x0 + roi.w as usize, y0 + roi.h as usize);
    integral[y1 * stride + x1] + integral[y0 * stride + x0]
        - integral[y0 * stride + x1]
        - integral[y1 * stride + x0]
}

fn nms_candidates(mut boxes: Vec<Candidate>, iou_thr: f64) -> Vec<Candidate> {
    boxes.sort_by(|a, b| {
        b.margin
            .partial_cmp(&a.margin)
            .unwrap()
            .then(a.roi.y.cmp(&b.roi.y))
            .then(a.roi.x.cmp(&b.roi.x))
    });
    let mut kept: Vec<Candidate> = Vec::new();
    for c in boxes {
        if kept.iter().all(|k| k.roi.iou(&c.roi) < iou_thr) {
            kept.push(c);
        }
    }
    kept
}

/// Greedy NMS over scored boxes: the highest score wins, ties broken by
/// smaller y then smaller x; overlaps at or above `iou_thr` are suppressed.
pub fn nms(boxes: &[DetectionBox], iou_thr: f64) -> Vec<DetectionBox> {
    let cands: Vec<Candidate> = boxes
        .iter()
        .map(|b| Candidate { roi: b.roi, class: b.class, margin: b.score })
        .collect();
    nms_candidates(cands, iou_thr)
        .into_iter()
        .map(|c| DetectionBox { roi: c.roi, class: c.class, score: c.margin })
        .collect()
}

/// Number of distinct persons implied by an NMS-filtered box set: full-body
/// boxes count one each; head and head-shoulders boxes count one unless
/// their center lies inside a kept full-body box.
pub fn count_by_detection(boxes: &[DetectionBox]) -> u32 {
    person_boxes(boxes).len() as u32
}

/// The subset of boxes that represent distinct persons under the absorption
/// rule of [`count_by_detection`].
pub fn person_boxes(boxes: &[DetectionBox]) -> Vec<DetectionBox> {
    let bodies: Vec<&DetectionBox> =
        boxes.iter().filter(|b| b.class == BoxClass::FullBody).collect();
    let mut out: Vec<DetectionBox> = bodies.iter().map(|b| (*b).clone()).collect();
    for b in boxes {
        if b.class == BoxClass::FullBody {
            continue;
        }
        let (cx, cy) = b.roi.center();
        if !bodies.iter().any(|fb| fb.roi.contains_point(cx, cy)) {
            out.push(b.clone());
        }
    }
    out
}
