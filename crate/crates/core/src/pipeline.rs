//! Stream-level glue: the per-frame counting pipeline, training-data
//! collection for the detector and the regression counter, and the incident
//! branch feature extraction / training / cross-validation protocol shared
//! by the CLI and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::detect::{
    self, compute_channels, default_window, train_boosted, BoostConfig, BoostedModel,
    DetectorConfig, Plane,
};
use crate::error::{Error, Result};
use crate::eval;
use crate::flow::{self, FlowConfig, FlowHistogramFeature, DEFAULT_FLOW_GRID};
use crate::fuse::{self, FusedEstimate, FusionConfig};
use crate::ml::{self, IncidentScore, IncidentStreamConfig, LinearSvmModel, SvmConfig};
use crate::model::{BoxClass, Frame, PerspectiveMap, Roi};
use crate::regress::{self, BlockFeatures, LinearCountModel};
use crate::segment::{edge_map, BackgroundModel, SegmentationConfig};
use crate::synth::{self, AgentTruth, FrameTruth};
use crate::tracklets::{
    interaction_features, pool_window_features, CrowdInteractionFeature, InteractionConfig,
    TrackletConfig, TrackletTracker,
};

/// Frames to let the background model settle before features are trusted.
pub const DEFAULT_WARMUP_FRAMES: u32 = 50;

// ---------------------------------------------------------------------------
// Counting pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CountingConfig {
    pub segmentation: SegmentationConfig,
    pub edge_threshold: i32,
    pub fusion: FusionConfig,
}

impl Default for CountingConfig {
    fn default() -> Self {
        CountingConfig {
            segmentation: SegmentationConfig::default(),
            edge_threshold: crate::segment::DEFAULT_EDGE_THRESHOLD,
            fusion: FusionConfig { use_fg_gate: true, ..Default::default() },
        }
    }
}

/// Per-stream counting state: background model plus immutable models.
pub struct CountingPipeline {
    bg: BackgroundModel,
    det_models: Vec<BoostedModel>,
    reg_model: LinearCountModel,
    pmap: PerspectiveMap,
    cfg: CountingConfig,
    scales: Vec<f64>,
}

impl CountingPipeline {
    pub fn new(
        width: u32,
        height: u32,
        det_models: Vec<BoostedModel>,
        reg_model: LinearCountModel,
        pmap: PerspectiveMap,
        cfg: CountingConfig,
    ) -> Self {
        let scales = if cfg.fusion.scales.is_empty() {
            detect::default_scales(height, &cfg.fusion.detector)
        } else {
            cfg.fusion.scales.clone()
        };
        let bg = BackgroundModel::new(width, height, cfg.segmentation.clone());
        CountingPipeline { bg, det_models, reg_model, pmap, cfg, scales }
    }

    /// Segments, detects, and fuses one frame.
    pub fn process(&mut self, frame: &Frame) -> Result<FusedEstimate> {
        let fg = self.bg.update_and_segment(frame)?;
        let edges = edge_map(frame, self.cfg.edge_threshold);
        let fusion = FusionConfig {
            detector: self.cfg.fusion.detector.clone(),
            scales: self.scales.clone(),
            use_fg_gate: self.cfg.fusion.use_fg_gate,
        };
        fuse::fuse_count(
            frame,
            &fg,
            &edges,
            &self.det_models,
            &self.reg_model,
            &self.pmap,
            &fusion,
        )
    }
}

// ---------------------------------------------------------------------------
// Detector training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DetectorTrainConfig {
    pub rounds: usize,
    pub positives_per_class: usize,
    pub negatives_per_class: usize,
    pub seed: u64,
    /// Allowed false positives per frame when calibrating the operating
    /// threshold ("stringent" by default).
    pub target_fp_per_frame: f64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            rounds: 256,
            positives_per_class: 500,
            negatives_per_class: 500,
            seed: 0,
            target_fp_per_frame: 0.01,
        }
    }
}

fn part_box(class: BoxClass, agent: &AgentTruth, w: u32, h: u32) -> Roi {
    let boxes = synth::agent_boxes(agent.x, agent.y, agent.height, w, h);
    match class {
        BoxClass::FullBody => boxes.full,
        BoxClass::HeadShoulders => boxes.head_shoulders,
        BoxClass::Head => boxes.head,
    }
}

/// Cuts a training patch for `roi`, rescales it to the class window plus a
/// one-cell context margin, and returns the interior window features —
/// the same cell layout the sliding-window evaluator reads.
pub fn crop_features(plane: &Plane, roi: &Roi, class: BoxClass) -> Vec<f32> {
    let (ww, wh) = default_window(class);
    let cell = 4usize;
    let margin_x = roi.w as f64 * cell as f64 / ww as f64;
    let margin_y = roi.h as f64 * cell as f64 / wh as f64;
    let patch = plane.crop_replicated(
        (roi.x as f64 - margin_x).round() as i64,
        (roi.y as f64 - margin_y).round() as i64,
        (roi.w as f64 + 2.0 * margin_x).round() as usize,
        (roi.h as f64 + 2.0 * margin_y).round() as usize,
    );
    let resized = patch.resize(ww as usize + 2 * cell, wh as usize + 2 * cell);
    let stack = compute_channels(&resized, cell);
    stack.window_features(1, 1, ww as usize / cell, wh as usize / cell)
}

/// Collects positive and negative window features for one class from
/// generated frames with truth.
///
/// Negatives mix clear background windows with perturbed agent windows
/// (shifted or rescaled until they no longer count as hits), so the
/// classifier has to localize rather than merely notice that agents exist.
pub fn collect_crops(
    frames: &[Frame],
    truths: &[FrameTruth],
    class: BoxClass,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut positives = Vec::with_capacity(n_pos);
    let mut negatives = Vec::with_capacity(n_neg);
    let (ww, wh) = default_window(class);
    let aspect = ww as f64 / wh as f64;
    let mut fi = 0usize;
    let mut attempt = 0usize;
    while (positives.len() < n_pos || negatives.len() < n_neg) && fi < frames.len() * 12 {
        let idx = fi % frames.len();
        fi += 1;
        let frame = &frames[idx];
        let truth = &truths[idx];
        let plane = Plane::from(frame);
        if positives.len() < n_pos {
            for agent in &truth.agents {
                if positives.len() >= n_pos {
                    break;
                }
                let roi = part_box(class, agent, frame.width, frame.height);
                if roi.w < 8 || roi.h < 8 {
                    continue;
                }
                positives.push(crop_features(&plane, &roi, class));
                // jittered copy: the sliding grid never lands exactly on a
                // person, so the positive manifold must cover small offsets;
                // scale jitter only oversizes so detections prefer framings
                // that contain the whole silhouette
                if positives.len() < n_pos {
                    let s = rng.gen_range(1.0..1.16f64);
                    let dx = rng.gen_range(-0.06..0.06) * roi.w as f64;
                    let dy = rng.gen_range(-0.06..0.06) * roi.h as f64;
                    let w = (roi.w as f64 * s).round().max(8.0);
                    let h = (roi.h as f64 * s).round().max(8.0);
                    let x = (roi.x as f64 + dx + (roi.w as f64 - w) / 2.0).round().max(0.0);
                    let y = (roi.y as f64 + dy + (roi.h as f64 - h) / 2.0).round().max(0.0);
                    let jit = Roi::new(
                        (x as u32).min(frame.width.saturating_sub(w as u32 + 1)),
                        (y as u32).min(frame.height.saturating_sub(h as u32 + 1)),
                        w as u32,
                        h as u32,
                    );
                    if jit.fits_in(frame.width, frame.height) {
                        positives.push(crop_features(&plane, &jit, class));
                    }
                }
            }
        }
        let part_boxes: Vec<Roi> = truth
            .agents
            .iter()
            .map(|a| part_box(class, a, frame.width, frame.height))
            .collect();
        for _ in 0..8 {
            if negatives.len() >= n_neg {
                break;
            }
            attempt += 1;
            let candidate = if attempt % 3 == 0 || truth.agents.is_empty() {
                // clear background window at a random scale
                let scale = rng.gen_range(0.8..2.5f64);
                let bw = ((wh as f64 * scale * aspect) as u32).clamp(8, frame.width - 1);
                let bh = ((wh as f64 * scale) as u32).clamp(8, frame.height - 1);
                let x = rng.gen_range(0..frame.width - bw);
                let y = rng.gen_range(0..frame.height - bh);
                Roi::new(x, y, bw, bh)
            } else {
                // perturbed agent window: wrong offset or wrong scale
                let a = &truth.agents[rng.gen_range(0..truth.agents.len())];
                let base = part_box(class, a, frame.width, frame.height);
                let (cx, cy) = base.center();
                let (mut w, mut h) = (base.w as f64, base.h as f64);
                let (mut nx, mut ny) = (cx, cy);
                if rng.gen_bool(0.5) {
                    let f = if rng.gen_bool(0.5) {
                        rng.gen_range(0.40..0.62)
                    } else {
                        rng.gen_range(1.6..2.4)
                    };
                    w *= f;
                    h *= f;
                } else {
                    let dx = rng.gen_range(0.5..1.2) * w * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let dy = rng.gen_range(0.5..1.2) * h * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    nx += dx;
                    ny += dy;
                }
                let x0 = (nx - w / 2.0).round().max(0.0) as u32;
                let y0 = (ny - h / 2.0).round().max(0.0) as u32;
                let bw = (w.round() as u32).clamp(8, frame.width.saturating_sub(x0 + 1).max(8));
                let bh = (h.round() as u32).clamp(8, frame.height.saturating_sub(y0 + 1).max(8));
                Roi::new(x0.min(frame.width - 9), y0.min(frame.height - 9), bw, bh)
            };
            if !candidate.fits_in(frame.width, frame.height) {
                continue;
            }
            let (cx, cy) = candidate.center();
            let hard_negative = part_boxes
                .iter()
                .all(|b| b.iou(&candidate) < 0.3 && !b.contains_point(cx, cy));
            if hard_negative {
                negatives.push(crop_features(&plane, &candidate, class));
            }
        }
    }
    (positives, negatives)
}

/// False positives of an interim model on training frames, cropped back out
/// as negative examples (bootstrap hard-negative mining).
pub fn mine_hard_negatives(
    model: &BoostedModel,
    frames: &[Frame],
    truths: &[FrameTruth],
    limit: usize,
    stride: usize,
) -> Vec<Vec<f32>> {
    let det_cfg = DetectorConfig::default();
    let mut mined = Vec::new();
    for (frame, truth) in frames.iter().zip(truths).step_by(stride.max(1)) {
        if mined.len() >= limit {
            break;
        }
        let scales = detect::default_scales(frame.height, &det_cfg);
        let scored =
            detect::detect_scored(frame, std::slice::from_ref(model), &scales, &det_cfg, None);
        let part_boxes: Vec<Roi> = truth
            .agents
            .iter()
            .map(|a| part_box(model.class, a, frame.width, frame.height))
            .collect();
        let plane = Plane::from(frame);
        for (b, _) in scored {
            if mined.len() >= limit {
                break;
            }
            // anything below the localization band is a negative, wrong-scale
            // and wrong-offset windows on agents included
            let false_positive = part_boxes.iter().all(|t| t.iou(&b.roi) < 0.45);
            if false_positive {
                mined.push(crop_features(&plane, &b.roi, model.class));
            }
        }
    }
    mined
}

/// Trains the three class detectors on generated scenes — initial fit, one
/// bootstrap round over mined false positives — then calibrates each score
/// threshold so validation false positives stay under the target.
pub fn train_detector(
    train_frames: &[Frame],
    train_truths: &[FrameTruth],
    val_frames: &[Frame],
    val_truths: &[FrameTruth],
    cfg: &DetectorTrainConfig,
) -> Result<Vec<BoostedModel>> {
    let mut models = Vec::with_capacity(3);
    for (i, class) in BoxClass::ALL.into_iter().enumerate() {
        let (pos, mut neg) = collect_crops(
            train_frames,
            train_truths,
            class,
            cfg.positives_per_class,
            cfg.negatives_per_class,
            cfg.seed.wrapping_add(i as u64),
        );
        let boost_cfg = BoostConfig { rounds: cfg.rounds, ..BoostConfig::for_class(class) };
        let mut model = train_boosted(&pos, &neg, &boost_cfg)?.0;
        for _ in 0..2 {
            let mined = mine_hard_negatives(
                &model,
                train_frames,
                train_truths,
                cfg.negatives_per_class,
                3,
            );
            if mined.is_empty() {
                break;
            }
            neg.extend(mined);
            model = train_boosted(&pos, &neg, &boost_cfg)?.0;
        }
        models.push(model);
    }
    calibrate_thresholds(&mut models, val_frames, val_truths, cfg.target_fp_per_frame);
    Ok(models)
}

/// Sets each model's score threshold at the operating point where false
/// positives on the validation frames stay at or below
/// `target_fp_per_frame`.
///
/// Matching is one-to-one per class: every true person justifies at most one
/// detection, so cross-scale duplicates count as false positives and the
/// resulting threshold stays stringent.
pub fn calibrate_thresholds(
    models: &mut [BoostedModel],
    frames: &[Frame],
    truths: &[FrameTruth],
    target_fp_per_frame: f64,
) {
    let det_cfg = DetectorConfig::default();
    let mut fp_margins: Vec<Vec<f64>> = vec![Vec::new(); models.len()];
    for (frame, truth) in frames.iter().zip(truths) {
        let scales = detect::default_scales(frame.height, &det_cfg);
        let mut scored = detect::detect_scored(frame, models, &scales, &det_cfg, None);
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let true_boxes: Vec<Roi> = truth
            .agents
            .iter()
            .map(|a| synth::agent_boxes(a.x, a.y, a.height, frame.width, frame.height).full)
            .collect();
        let mut taken: Vec<Vec<bool>> = vec![vec![false; true_boxes.len()]; models.len()];
        for (b, margin) in scored {
            let idx = models.iter().position(|m| m.class == b.class).unwrap();
            let (cx, cy) = b.roi.center();
            let slot = true_boxes.iter().enumerate().find(|(ti, t)| {
                !taken[idx][*ti] && (t.iou(&b.roi) >= 0.3 || t.contains_point(cx, cy))
            });
            match slot {
                Some((ti, _)) => taken[idx][ti] = true,
                None => fp_margins[idx].push(margin),
            }
        }
    }
    let allowed = (target_fp_per_frame * frames.len() as f64).floor() as usize;
    for (model, mut margins) in models.iter_mut().zip(fp_margins) {
        margins.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if margins.len() > allowed {
            model.score_threshold = margins[allowed] + 1e-9;
        }
        model.score_threshold = model.score_threshold.max(0.0);
    }
}

// ---------------------------------------------------------------------------
// Regression training
// ---------------------------------------------------------------------------

/// Half-person shift applied to residual training targets. The fusion
/// regressor's output is clamped at zero, so shifting the targets down makes
/// background-only frames land strictly below the clamp and come out as
/// exactly zero; half a person is inside the rounding granularity of the
/// integer count estimates, so dense-scene accuracy is unaffected.
pub const RESIDUAL_TARGET_SHIFT: f64 = 0.5;

/// Per-frame regression samples from a stream: runs the background model
/// through the whole stream, extracts block features after the warm-up, and
/// pairs them with count targets.
///
/// With detector models supplied, features are masked by the detections and
/// the target becomes the residual `truth - detected - RESIDUAL_TARGET_SHIFT`
/// — the distribution the fusion regressor sees at inference time. Without
/// models, features are unmasked and the target is the full count.
pub fn regression_samples(
    frames: &[Frame],
    truths: &[FrameTruth],
    det_models: Option<&[BoostedModel]>,
    counting_cfg: &CountingConfig,
    pmap: &PerspectiveMap,
    warmup: u32,
) -> Result<(Vec<BlockFeatures>, Vec<f64>)> {
    let (w, h) = (frames[0].width, frames[0].height);
    let mut bg = BackgroundModel::new(w, h, counting_cfg.segmentation.clone());
    let scales = detect::default_scales(h, &counting_cfg.fusion.detector);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, (frame, truth)) in frames.iter().zip(truths).enumerate() {
        let fg = bg.update_and_segment(frame)?;
        if (i as u32) < warmup {
            continue;
        }
        let edges = edge_map(frame, counting_cfg.edge_threshold);
        match det_models {
            Some(models) => {
                let boxes = detect::detect_gated(
                    frame,
                    models,
                    &scales,
                    &counting_cfg.fusion.detector,
                    counting_cfg.fusion.use_fg_gate.then_some(&fg),
                );
                let detected = detect::count_by_detection(&boxes) as f64;
                let features = fuse::residual_features(&fg, &edges, pmap, &boxes)?;
                xs.push(features);
                ys.push(truth.truth.count as f64 - detected - RESIDUAL_TARGET_SHIFT);
            }
            None => {
                xs.push(regress::extract_block_features(&fg, &edges, pmap, &[])?);
                ys.push(truth.truth.count as f64);
            }
        }
    }
    Ok((xs, ys))
}

// ---------------------------------------------------------------------------
// Incident branch: feature extraction, training, cross-validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct IncidentConfig {
    pub segmentation: SegmentationConfig,
    pub flow: FlowConfig,
    /// Frames are downscaled by this factor before optical flow.
    pub flow_downscale: usize,
    pub flow_min_mag: f64,
    pub tracklets: TrackletConfig,
    pub interaction: InteractionConfig,
    pub stream: IncidentStreamConfig,
    pub fps: f64,
}

impl Default for IncidentConfig {
    fn default() -> Self {
        IncidentConfig {
            segmentation: SegmentationConfig::default(),
            flow: FlowConfig::default(),
            flow_downscale: 2,
            flow_min_mag: 0.5,
            tracklets: TrackletConfig::default(),
            interaction: InteractionConfig::default(),
            stream: IncidentStreamConfig::default(),
            fps: 25.0,
        }
    }
}

/// Raw branch features for one clip, aligned per frame (entry 0 duplicates
/// the first frame pair).
pub struct IncidentClipFeatures {
    pub flow: Vec<FlowHistogramFeature>,
    pub tracklet: Vec<[f64; 8]>,
    pub incident: Vec<bool>,
    pub onset: Option<u32>,
    pub label: bool,
    pub fps: f64,
}

/// Streams a clip through segmentation, optical flow, and tracklet tracking,
/// producing per-frame branch features.
pub struct IncidentFeatureExtractor {
    cfg: IncidentConfig,
    bg: BackgroundModel,
    tracker: TrackletTracker,
    prev_small: Option<Plane>,
    window: Vec<CrowdInteractionFeature>,
    window_len: usize,
    pub flow_features: Vec<FlowHistogramFeature>,
    pub tracklet_pooled: Vec<[f64; 8]>,
}

impl IncidentFeatureExtractor {
    pub fn new(width: u32, height: u32, cfg: IncidentConfig) -> Self {
        let window_len = ((cfg.stream.window_s * cfg.fps).round() as usize).max(1);
        let tracker = TrackletTracker::new(TrackletConfig { fps: cfg.fps, ..cfg.tracklets.clone() });
        IncidentFeatureExtractor {
            bg: BackgroundModel::new(width, height, cfg.segmentation.clone()),
            tracker,
            prev_small: None,
            window: Vec::new(),
            window_len,
            flow_features: Vec::new(),
            tracklet_pooled: Vec::new(),
            cfg,
        }
    }

    pub fn step(&mut self, frame_index: u32, frame: &Frame) -> Result<()> {
        let fg = self.bg.update_and_segment(frame)?;
        let plane = Plane::from(frame);

        // tracklet branch at native resolution
        self.tracker.step(frame_index, &plane, &fg);
        let coexisting = self.tracker.coexisting_at(frame_index);
        let feat = interaction_features(&coexisting, &self.cfg.interaction);
        self.window.push(feat);
        if self.window.len() > self.window_len {
            self.window.remove(0);
        }
        self.tracklet_pooled.push(pool_window_features(&self.window));

        // flow branch on the downscaled pair
        let ds = self.cfg.flow_downscale.max(1);
        let small = if ds == 1 {
            plane
        } else {
            plane.resize((plane.w / ds).max(8), (plane.h / ds).max(8))
        };
        if let Some(prev) = self.prev_small.take() {
            let field = flow::optical_flow(&prev, &small, &self.cfg.flow)?;
            let (gw, gh) = DEFAULT_FLOW_GRID;
            let hist = flow::flow_histogram_feature(&field, gw, gh, self.cfg.flow_min_mag);
            if self.flow_features.is_empty() {
                self.flow_features.push(hist.clone()); // backfill frame 0
            }
            self.flow_features.push(hist);
        }
        self.prev_small = Some(small);
        Ok(())
    }
}

/// Extracts clip features from frames already in memory.
pub fn extract_incident_features(
    frames: &[Frame],
    incident_flags: &[bool],
    onset: Option<u32>,
    cfg: &IncidentConfig,
) -> Result<IncidentClipFeatures> {
    let mut ex = IncidentFeatureExtractor::new(frames[0].width, frames[0].height, cfg.clone());
    for (i, f) in frames.iter().enumerate() {
        ex.step(i as u32, f)?;
    }
    let label = incident_flags.iter().any(|&b| b);
    Ok(IncidentClipFeatures {
        flow: ex.flow_features,
        tracklet: ex.tracklet_pooled,
        incident: incident_flags.to_vec(),
        onset,
        label,
        fps: cfg.fps,
    })
}

/// Trained incident models: one SVM per branch, both calibrated.
pub struct IncidentModels {
    pub flow_svm: LinearSvmModel,
    pub tracklet_svm: LinearSvmModel,
}

/// Gathers per-frame samples with clean labels: frames inside one pooling
/// window of the onset are skipped, and samples are thinned to decorrelate.
fn clip_samples(
    clip: &IncidentClipFeatures,
    window_frames: usize,
    thin: usize,
) -> (Vec<(Vec<f64>, i8)>, Vec<(Vec<f64>, i8)>) {
    let mut flow_samples = Vec::new();
    let mut tracklet_samples = Vec::new();
    let n = clip.flow.len().min(clip.tracklet.len()).min(clip.incident.len());
    for i in (0..n).step_by(thin.max(1)) {
        if let Some(onset) = clip.onset {
            let o = onset as usize;
            // transition zone: pooled windows straddling the onset
            if i >= o.saturating_sub(1) && i < o + window_frames {
                continue;
            }
        }
        let label: i8 = if clip.incident[i] { 1 } else { -1 };
        flow_samples.push((clip.flow[i].values.clone(), label));
        tracklet_samples.push((clip.tracklet[i].to_vec(), label));
    }
    (flow_samples, tracklet_samples)
}

/// Trains and calibrates the two branch SVMs on training clips. Calibration
/// margins come from clips held out of the SVM fit (every fourth clip).
pub fn train_incident_models(
    clips: &[&IncidentClipFeatures],
    svm_cfg: &SvmConfig,
    cfg: &IncidentConfig,
) -> Result<IncidentModels> {
    let window_frames = ((cfg.stream.window_s * cfg.fps).round() as usize).max(1);
    let mut fit_flow: Vec<(Vec<f64>, i8)> = Vec::new();
    let mut fit_tracklet: Vec<(Vec<f64>, i8)> = Vec::new();
    let mut cal_flow: Vec<(Vec<f64>, i8)> = Vec::new();
    let mut cal_tracklet: Vec<(Vec<f64>, i8)> = Vec::new();
    for (ci, clip) in clips.iter().enumerate() {
        let (f, t) = clip_samples(clip, window_frames, 3);
        if ci % 4 == 3 {
            cal_flow.extend(f);
            cal_tracklet.extend(t);
        } else {
            fit_flow.extend(f);
            fit_tracklet.extend(t);
        }
    }
    if cal_flow.is_empty() {
        return Err(Error::Train("not enough clips to hold out a calibration split".into()));
    }
    let train_branch = |fit: &[(Vec<f64>, i8)], cal: &[(Vec<f64>, i8)]| -> Result<LinearSvmModel> {
        let x: Vec<Vec<f64>> = fit.iter().map(|(v, _)| v.clone()).collect();
        let y: Vec<i8> = fit.iter().map(|(_, l)| *l).collect();
        let (mut model, _) = ml::train_svm(&x, &y, svm_cfg)?;
        let margins: Vec<f64> = cal.iter().map(|(v, _)| model.margin(v)).collect();
        let labels: Vec<i8> = cal.iter().map(|(_, l)| *l).collect();
        ml::calibrate(&mut model, &margins, &labels)?;
        Ok(model)
    };
    Ok(IncidentModels {
        flow_svm: train_branch(&fit_flow, &cal_flow)?,
        tracklet_svm: train_branch(&fit_tracklet, &cal_tracklet)?,
    })
}

/// Scores one clip with trained models: per-frame calibrated branch
/// probabilities pooled into the fused confidence stream.
pub fn score_clip(
    clip: &IncidentClipFeatures,
    models: &IncidentModels,
    cfg: &IncidentConfig,
) -> Result<(Vec<IncidentScore>, Vec<u32>)> {
    let n = clip.flow.len().min(clip.tracklet.len());
    let mut flow_probs = Vec::with_capacity(n);
    let mut tracklet_probs = Vec::with_capacity(n);
    for i in 0..n {
        let fm = models.flow_svm.margin_checked(&clip.flow[i].values)?;
        let tm = models.tracklet_svm.margin_checked(&clip.tracklet[i])?;
        flow_probs.push(models.flow_svm.probability(fm));
        tracklet_probs.push(models.tracklet_svm.probability(tm));
    }
    ml::incident_stream(&flow_probs, &tracklet_probs, cfg.fps, 0, &cfg.stream)
}

/// One clip's cross-validated outcome.
#[derive(Debug, Clone)]
pub struct ClipOutcome {
    pub label: bool,
    pub max_confidence: f64,
    pub lag: eval::LagResult,
    pub alerted: bool,
}

/// Clip-level five-fold protocol: folds split at clip granularity, branch
/// SVMs trained per fold, held-out clips scored by their fold's models.
pub fn incident_cross_validation(
    clips: &[IncidentClipFeatures],
    k: usize,
    seed: u64,
    svm_cfg: &SvmConfig,
    cfg: &IncidentConfig,
) -> Result<(Vec<ClipOutcome>, f64)> {
    let folds = eval::kfold(clips.len(), k, seed)?;
    let mut outcomes: Vec<Option<ClipOutcome>> = (0..clips.len()).map(|_| None).collect();
    for fold in &folds {
        let in_fold = |i: usize| fold.contains(&i);
        let train_clips: Vec<&IncidentClipFeatures> = (0..clips.len())
            .filter(|&i| !in_fold(i))
            .map(|i| &clips[i])
            .collect();
        let models = train_incident_models(&train_clips, svm_cfg, cfg)?;
        for &i in fold {
            let clip = &clips[i];
            let (scores, alerts) = score_clip(clip, &models, cfg)?;
            let max_confidence =
                scores.iter().map(|s| s.confidence).fold(0.0f64, f64::max);
            let lag = match clip.onset {
                Some(onset) => eval::detection_lag(&alerts, onset, clip.fps, 1.0),
                None => eval::LagResult { lag_s: None, false_alarms: alerts.len() },
            };
            outcomes[i] = Some(ClipOutcome {
                label: clip.label,
                max_confidence,
                lag,
                alerted: !alerts.is_empty(),
            });
        }
    }
    let outcomes: Vec<ClipOutcome> = outcomes.into_iter().map(Option::unwrap).collect();
    let scores: Vec<f64> = outcomes.iter().map(|o| o.max_confidence).collect();
    let labels: Vec<i8> = outcomes.iter().map(|o| if o.label { 1 } else { -1 }).collect();
    let auc = eval::roc_auc(&scores, &labels)?.auc;
    Ok((outcomes, auc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, Scenario, ScenarioSpec};

    fn tiny_scene(scenario: Scenario, n: u32, seed: u64) -> (Vec<Frame>, Vec<FrameTruth>) {
        let spec = ScenarioSpec {
            width: 352,
            height: 288,
            duration_s: 2.0,
            agent_h_bottom: 96.0,
            ..ScenarioSpec::new(scenario, n, seed)
        };
        let (frames, truth) = generate(&spec).unwrap();
        (frames, truth.frames)
    }

    #[test]
    fn crop_features_have_window_length() {
        let (frames, truths) = tiny_scene(Scenario::SparseWalk, 3, 5);
        let (pos, neg) = collect_crops(&frames, &truths, BoxClass::FullBody, 20, 20, 1);
        assert_eq!(pos.len(), 20);
        assert_eq!(neg.len(), 20);
        let expect = 8 * (32 / 4) * (64 / 4);
        assert!(pos.iter().chain(&neg).all(|v| v.len() == expect));
    }

    #[test]
    fn regression_samples_masked_and_unmasked() {
        let (frames, truths) = tiny_scene(Scenario::DenseCrowd, 12, 6);
        let cfg = CountingConfig::default();
        let pmap = PerspectiveMap::unit(288);
        let (xs, ys) =
            regression_samples(&frames, &truths, None, &cfg, &pmap, 10).unwrap();
        assert_eq!(xs.len(), frames.len() - 10);
        assert!(ys.iter().all(|&y| y == 12.0));
    }

    #[test]
    fn incident_extractor_aligns_streams() {
        let (frames, _) = tiny_scene(Scenario::LaminarFlow, 5, 7);
        let cfg = IncidentConfig::default();
        let mut ex = IncidentFeatureExtractor::new(352, 288, cfg);
        for (i, f) in frames.iter().enumerate() {
            ex.step(i as u32, f).unwrap();
        }
        assert_eq!(ex.tracklet_pooled.len(), frames.len());
        assert_eq!(ex.flow_features.len(), frames.len());
    }
}
