//! Interest-point incident branch: foreground-restricted Harris corners,
//! short template-tracked tracklets, and collectiveness/conflict/mean-speed
//! interaction features.

use serde::{Deserialize, Serialize};

use crate::detect::Plane;
use crate::ml::LinearSvmModel;
use crate::segment::BinaryMask;

/// Hard cap on tracklet lifetime in seconds.
pub const TRACKLET_MAX_SECONDS: f64 = 5.0;

/// A short tracked interest point with contiguous frame indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tracklet {
    pub id: u64,
    /// (frame index, x, y) with consecutive frame indices.
    pub points: Vec<(u32, f64, f64)>,
}

impl Tracklet {
    pub fn first_frame(&self) -> u32 {
        self.points.first().unwrap().0
    }

    pub fn last_frame(&self) -> u32 {
        self.points.last().unwrap().0
    }

    pub fn spans(&self, frame: u32) -> bool {
        frame >= self.first_frame() && frame <= self.last_frame()
    }

    /// Mean velocity in pixels/frame over the tracklet's life.
    pub fn mean_velocity(&self) -> (f64, f64) {
        let (f0, x0, y0) = *self.points.first().unwrap();
        let (f1, x1, y1) = *self.points.last().unwrap();
        if f1 == f0 {
            return (0.0, 0.0);
        }
        let dt = (f1 - f0) as f64;
        ((x1 - x0) / dt, (y1 - y0) / dt)
    }

    pub fn mean_position(&self) -> (f64, f64) {
        let n = self.points.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(ax, ay), &(_, x, y)| (ax + x, ay + y));
        (sx / n, sy / n)
    }
}

/// Harris corner response over the whole plane (k = 0.04, 3x3 box window on
/// Sobel gradient products). Border pixels score 0.
pub fn harris_response(p: &Plane) -> Vec<f64> {
    let (w, h) = (p.w, p.h);
    let mut gx = vec![0f64; w * h];
    let mut gy = vec![0f64; w * h];
    if w < 3 || h < 3 {
        return vec![0.0; w * h];
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let (a, b, c) = (p.data[i - w - 1] as i32, p.data[i - w] as i32, p.data[i - w + 1] as i32);
            let (d, f) = (p.data[i - 1] as i32, p.data[i + 1] as i32);
            let (g, hh, k) = (p.data[i + w - 1] as i32, p.data[i + w] as i32, p.data[i + w + 1] as i32);
            gx[i] = ((c + 2 * f + k) - (a + 2 * d + g)) as f64;
            gy[i] = ((g + 2 * hh + k) - (a + 2 * b + c)) as f64;
        }
    }
    let mut response = vec![0f64; w * h];
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let mut sxx = 0f64;
            let mut sxy = 0f64;
            let mut syy = 0f64;
            for dy in 0..3 {
                for dx in 0..3 {
                    let i = (y + dy - 1) * w + (x + dx - 1);
                    sxx += gx[i] * gx[i];
                    sxy += gx[i] * gy[i];
                    syy += gy[i] * gy[i];
                }
            }
            let det = sxx * syy - sxy * sxy;
            let trace = sxx + syy;
            response[y * w + x] = det - 0.04 * trace * trace;
        }
    }
    response
}

/// Selects up to `max_points` interest points: Harris candidates restricted
/// to foreground pixels, greedy by descending response with a minimum
/// spacing, ties broken by (y, x). Zero or negative responses never qualify.
pub fn select_interest_points(
    p: &Plane,
    fg: &BinaryMask,
    max_points: usize,
    min_spacing: f64,
) -> Vec<(u32, u32)> {
    assert_eq!((fg.width as usize, fg.height as usize), (p.w, p.h));
    let response = harris_response(p);
    let mut candidates: Vec<(f64, u32, u32)> = Vec::new();
    for y in 0..p.h {
        for x in 0..p.w {
            let r = response[y * p.w + x];
            if r > 0.0 && fg.get(x as u32, y as u32) {
                candidates.push((r, y as u32, x as u32));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let spacing2 = min_spacing * min_spacing;
    let mut selected: Vec<(u32, u32)> = Vec::new();
    for (_, y, x) in candidates {
        if selected.len() >= max_points {
            break;
        }
        let ok = selected.iter().all(|&(sx, sy)| {
            let dx = sx as f64 - x as f64;
            let dy = sy as f64 - y as f64;
            dx * dx + dy * dy >= spacing2
        });
        if ok {
            selected.push((x, y));
        }
    }
    selected
}

#[derive(Debug, Clone)]
pub struct TrackletConfig {
    /// Template edge length (odd).
    pub template: usize,
    /// Search radius around the previous position.
    pub radius: i32,
    /// Terminate when the match cost exceeds this multiple of the running
    /// median cost.
    pub cost_spike: f64,
    /// Drop tracklets with fewer points than this.
    pub min_points: usize,
    /// New points are seeded this often, in frames.
    pub reseed_interval: u32,
    /// Maximum simultaneously tracked points.
    pub max_points: usize,
    /// Minimum spacing between seeded points, pixels.
    pub min_spacing: f64,
    pub fps: f64,
}

impl Default for TrackletConfig {
    fn default() -> Self {
        TrackletConfig {
            template: 9,
            radius: 10,
            cost_spike: 3.0,
            min_points: 3,
            reseed_interval: 12,
            max_points: 200,
            min_spacing: 8.0,
            fps: 25.0,
        }
    }
}

struct ActiveTracklet {
    id: u64,
    points: Vec<(u32, f64, f64)>,
    template: Vec<u8>,
    costs: Vec<u32>,
}

/// Per-stream tracklet pool: seeds interest points in the foreground,
/// tracks each by template matching, and terminates on cost spikes, frame
/// exit, or the lifetime cap.
pub struct TrackletTracker {
    cfg: TrackletConfig,
    max_frames: u32,
    next_id: u64,
    active: Vec<ActiveTracklet>,
    finished: Vec<Tracklet>,
    last_seed: Option<u32>,
}

impl TrackletTracker {
    pub fn new(cfg: TrackletConfig) -> Self {
        assert!(cfg.template % 2 == 1);
        let max_frames = (TRACKLET_MAX_SECONDS * cfg.fps).round() as u32;
        TrackletTracker { cfg, max_frames, next_id: 0, active: Vec::new(), finished: Vec::new(), last_seed: None }
    }

    fn extract_template(&self, p: &Plane, x: i64, y: i64) -> Option<Vec<u8>> {
        let t = self.cfg.template as i64;
        let half = t / 2;
        if x - half < 0 || y - half < 0 || x + half >= p.w as i64 || y + half >= p.h as i64 {
            return None;
        }
        let mut out = Vec::with_capacity((t * t) as usize);
        for dy in -half..=half {
            for dx in -half..=half {
                out.push(p.get((x + dx) as usize, (y + dy) as usize));
            }
        }
        Some(out)
    }

    fn template_cost(&self, p: &Plane, template: &[u8], x: i64, y: i64) -> Option<u32> {
        let t = self.cfg.template as i64;
        let half = t / 2;
        if x - half < 0 || y - half < 0 || x + half >= p.w as i64 || y + half >= p.h as i64 {
            return None;
        }
        let mut acc = 0u32;
        let mut k = 0usize;
        for dy in -half..=half {
            let row = ((y + dy) as usize) * p.w;
            for dx in -half..=half {
                let v = p.data[row + (x + dx) as usize] as i32;
                acc += (v - template[k] as i32).unsigned_abs();
                k += 1;
            }
        }
        Some(acc)
    }

    /// Advances every active tracklet into `plane` (frame `frame_index`) and
    /// seeds new points on the reseed schedule.
    pub fn step(&mut self, frame_index: u32, plane: &Plane, fg: &BinaryMask) {
        // 1. track active points
        let mut keep = Vec::new();
        for mut t in std::mem::take(&mut self.active) {
            let (_, px, py) = *t.points.last().unwrap();
            let (ix, iy) = (px.round() as i64, py.round() as i64);
            let mut best: Option<(u32, i64, i64, i64)> = None; // (cost, dist2, y, x)
            for dy in -self.cfg.radius..=self.cfg.radius {
                for dx in -self.cfg.radius..=self.cfg.radius {
                    let (nx, ny) = (ix + dx as i64, iy + dy as i64);
                    if let Some(cost) = self.template_cost(plane, &t.template, nx, ny) {
                        let dist2 = (dx * dx + dy * dy) as i64;
                        let key = (cost, dist2, ny, nx);
                        if best.map_or(true, |b| key < b) {
                            best = Some(key);
                        }
                    }
                }
            }
            let lifetime = frame_index.saturating_sub(t.points.first().unwrap().0);
            match best {
                Some((cost, _, ny, nx)) if lifetime < self.max_frames => {
                    // spike termination against the running median
                    let spike = if t.costs.len() >= 3 {
                        let mut sorted = t.costs.clone();
                        sorted.sort_unstable();
                        let median = sorted[sorted.len() / 2] as f64;
                        cost as f64 > self.cfg.cost_spike * median && median > 0.0
                    } else {
                        false
                    };
                    if spike {
                        self.finish(t);
                    } else {
                        t.costs.push(cost);
                        t.points.push((frame_index, nx as f64, ny as f64));
                        keep.push(t);
                    }
                }
                _ => self.finish(t), // left the frame or hit the lifetime cap
            }
        }
        self.active = keep;

        // 2. seed new points
        let due = match self.last_seed {
            None => true,
            Some(f) => frame_index - f >= self.cfg.reseed_interval,
        };
        if due && self.active.len() < self.cfg.max_points {
            let budget = self.cfg.max_points - self.active.len();
            let points = select_interest_points(plane, fg, budget * 2, self.cfg.min_spacing);
            let mut added = 0usize;
            for (x, y) in points {
                if added >= budget {
                    break;
                }
                let near_active = self.active.iter().any(|t| {
                    let (_, ax, ay) = *t.points.last().unwrap();
                    let dx = ax - x as f64;
                    let dy = ay - y as f64;
                    dx * dx + dy * dy < self.cfg.min_spacing * self.cfg.min_spacing
                });
                if near_active {
                    continue;
                }
                if let Some(template) = self.extract_template(plane, x as i64, y as i64) {
                    self.active.push(ActiveTracklet {
                        id: self.next_id,
                        points: vec![(frame_index, x as f64, y as f64)],
                        template,
                        costs: Vec::new(),
                    });
                    self.next_id += 1;
                    added += 1;
                }
            }
            self.last_seed = Some(frame_index);
        }
    }

    fn finish(&mut self, t: ActiveTracklet) {
        if t.points.len() >= self.cfg.min_points {
            self.finished.push(Tracklet { id: t.id, points: t.points });
        }
    }

    /// Tracklets spanning `frame`, both finished and still active, with at
    /// least two points.
    pub fn coexisting_at(&self, frame: u32) -> Vec<Tracklet> {
        let mut out: Vec<Tracklet> = self
            .finished
            .iter()
            .filter(|t| t.spans(frame))
            .cloned()
            .collect();
        out.extend(self.active.iter().filter(|t| t.points.len() >= 2).filter_map(|t| {
            let tr = Tracklet { id: t.id, points: t.points.clone() };
            tr.spans(frame).then_some(tr)
        }));
        out
    }

    pub fn finish_all(&mut self) {
        for t in std::mem::take(&mut self.active) {
            self.finish(t);
        }
    }

    pub fn finished(&self) -> &[Tracklet] {
        &self.finished
    }
}

/// Aggregate interaction statistics over coexisting tracklets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrowdInteractionFeature {
    /// Mean K-NN velocity cosine, in [-1, 1].
    pub collectiveness: f64,
    /// Distance-weighted opposing-motion statistic, >= 0.
    pub conflict: f64,
    /// Mean tracklet speed in pixels/frame.
    pub mean_speed: f64,
    pub active_tracklets: u32,
}

impl CrowdInteractionFeature {
    pub fn zero(active: u32) -> Self {
        CrowdInteractionFeature { collectiveness: 0.0, conflict: 0.0, mean_speed: 0.0, active_tracklets: active }
    }
}

#[derive(Debug, Clone)]
pub struct InteractionConfig {
    pub neighbors: usize,
    /// Distance scale for the conflict weight, pixels.
    pub d0: f64,
    /// Speeds below this contribute zero cosine.
    pub speed_gate: f64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        InteractionConfig { neighbors: 8, d0: 50.0, speed_gate: 0.1 }
    }
}

/// Collectiveness, conflict, and mean speed over a set of coexisting
/// tracklets. With fewer than two tracklets every statistic is zero.
pub fn interaction_features(tracklets: &[Tracklet], cfg: &InteractionConfig) -> CrowdInteractionFeature {
    let n = tracklets.len();
    if n < 2 {
        return CrowdInteractionFeature::zero(n as u32);
    }
    let velocities: Vec<(f64, f64)> = tracklets.iter().map(Tracklet::mean_velocity).collect();
    let positions: Vec<(f64, f64)> = tracklets.iter().map(Tracklet::mean_position).collect();
    let speeds: Vec<f64> = velocities.iter().map(|&(u, v)| (u * u + v * v).sqrt()).collect();

    let mut cos_sum = 0f64;
    let mut conflict_sum = 0f64;
    let mut pairs = 0usize;
    for i in 0..n {
        // K nearest coexisting tracklets by mean position
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = positions[i].0 - positions[j].0;
                let dy = positions[i].1 - positions[j].1;
                ((dx * dx + dy * dy).sqrt(), j)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(dist, j) in dists.iter().take(cfg.neighbors) {
            let cos = if speeds[i] < cfg.speed_gate || speeds[j] < cfg.speed_gate {
                0.0
            } else if velocities[i] == velocities[j] {
                1.0 // identical velocities are exactly parallel
            } else {
                ((velocities[i].0 * velocities[j].0 + velocities[i].1 * velocities[j].1)
                    / (speeds[i] * speeds[j]))
                    .clamp(-1.0, 1.0)
            };
            cos_sum += cos;
            let weight = if dist > 0.0 { (cfg.d0 / dist).min(1.0) } else { 1.0 };
            conflict_sum += (-cos).max(0.0) * weight;
            pairs += 1;
        }
    }
    let mean_speed = speeds.iter().sum::<f64>() / n as f64;
    CrowdInteractionFeature {
        collectiveness: cos_sum / pairs as f64,
        conflict: conflict_sum / pairs as f64,
        mean_speed,
        active_tracklets: n as u32,
    }
}

/// Pools a window of interaction features into the 8-dim tracklet-branch
/// input: mean and max of (collectiveness, conflict, mean_speed,
/// active_tracklets).
pub fn pool_window_features(window: &[CrowdInteractionFeature]) -> [f64; 8] {
    let mut out = [0f64; 8];
    if window.is_empty() {
        return out;
    }
    let n = window.len() as f64;
    let mut maxs = [f64::NEG_INFINITY; 4];
    for f in window {
        let vals = [f.collectiveness, f.conflict, f.mean_speed, f.active_tracklets as f64];
        for k in 0..4 {
            out[k] += vals[k] / n;
            maxs[k] = maxs[k].max(vals[k]);
        }
    }
    out[4..8].copy_from_slice(&maxs);
    out
}

/// Raw SVM margin of the tracklet branch on pooled window statistics.
pub fn score_tracklet_branch(pooled: &[f64; 8], model: &LinearSvmModel) -> crate::error::Result<f64> {
    model.margin_checked(pooled)
}
