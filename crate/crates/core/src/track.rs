//! Pedestrian flow from detections: data association into trajectories,
//! filtering, and incoming/outgoing classification.

use serde::{Deserialize, Serialize};

use crate::ml::LinearSvmModel;
use crate::model::DetectionBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryState {
    Active,
    Closed,
}

/// A tracked person path: (frame index, centroid) samples with strictly
/// increasing frame indices and gaps never exceeding the tracker's max gap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub points: Vec<(u32, f64, f64)>,
    pub state: TrajectoryState,
}

impl Trajectory {
    pub fn head(&self) -> (f64, f64) {
        let &(_, x, y) = self.points.last().expect("trajectory has points");
        (x, y)
    }

    pub fn last_frame(&self) -> u32 {
        self.points.last().expect("trajectory has points").0
    }

    pub fn net_displacement(&self) -> (f64, f64) {
        let &(_, x0, y0) = self.points.first().unwrap();
        let &(_, x1, y1) = self.points.last().unwrap();
        (x1 - x0, y1 - y0)
    }

    pub fn path_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let (_, x0, y0) = w[0];
                let (_, x1, y1) = w[1];
                ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
            })
            .sum()
    }

    /// |net| / path length; 0 for degenerate paths.
    pub fn straightness(&self) -> f64 {
        let len = self.path_length();
        if len == 0.0 {
            return 0.0;
        }
        let (dx, dy) = self.net_displacement();
        (dx * dx + dy * dy).sqrt() / len
    }

    /// Mean step speed in pixels/frame over the spanned frames.
    pub fn mean_speed(&self) -> f64 {
        let first = self.points.first().unwrap().0;
        let last = self.points.last().unwrap().0;
        if last == first {
            return 0.0;
        }
        self.path_length() / (last - first) as f64
    }

    /// Same path traversed backwards (frame indices re-ascending).
    pub fn reversed(&self) -> Trajectory {
        let frames: Vec<u32> = self.points.iter().map(|p| p.0).collect();
        let mut rev = self.points.clone();
        rev.reverse();
        let points =
            frames.into_iter().zip(rev).map(|(f, (_, x, y))| (f, x, y)).collect();
        Trajectory { id: self.id, points, state: self.state }
    }
}

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Association gate radius in pixels.
    pub gating: f64,
    /// Frames a trajectory may go unmatched before closing.
    pub max_gap: u32,
    /// Minimum points to survive filtering.
    pub min_points: usize,
    /// Minimum straightness (|net| / path length).
    pub min_straightness: f64,
    /// Minimum net displacement in pixels.
    pub min_displacement: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gating: 40.0,
            max_gap: 5,
            min_points: 10,
            min_straightness: 0.6,
            min_displacement: 20.0,
        }
    }
}

/// Greedy globally-nearest-pair matcher between trajectory heads and box
/// centroids: repeatedly match the closest remaining pair within the gate.
/// Returns (head index, box index) pairs, deterministic under ties.
pub fn greedy_nearest_pairs(
    heads: &[(f64, f64)],
    centroids: &[(f64, f64)],
    gate: f64,
) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, &(hx, hy)) in heads.iter().enumerate() {
        for (bi, &(cx, cy)) in centroids.iter().enumerate() {
            let d = ((hx - cx).powi(2) + (hy - cy).powi(2)).sqrt();
            if d <= gate {
                pairs.push((d, ti, bi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; heads.len()];
    let mut used_b = vec![false; centroids.len()];
    let mut out = Vec::new();
    for (_, ti, bi) in pairs {
        if !used_t[ti] && !used_b[bi] {
            used_t[ti] = true;
            used_b[bi] = true;
            out.push((ti, bi));
        }
    }
    out
}

/// Per-stream single-writer tracker state.
#[derive(Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    next_id: u64,
    active: Vec<Trajectory>,
    closed: Vec<Trajectory>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Tracker { cfg, next_id: 0, active: Vec::new(), closed: Vec::new() }
    }

    pub fn active(&self) -> &[Trajectory] {
        &self.active
    }

    /// Associates NMS-filtered boxes with active trajectories at
    /// `frame_index`, starting new trajectories for unmatched boxes and
    /// closing trajectories that have outlived the gap limit.
    pub fn step(&mut self, frame_index: u32, boxes: &[DetectionBox]) {
        let heads: Vec<(f64, f64)> = self.active.iter().map(Trajectory::head).collect();
        let centroids: Vec<(f64, f64)> = boxes.iter().map(|b| b.roi.center()).collect();
        let matches = greedy_nearest_pairs(&heads, &centroids, self.cfg.gating);
        let mut matched_t = vec![false; self.active.len()];
        let mut matched_b = vec![false; boxes.len()];
        for (ti, bi) in matches {
            matched_t[ti] = true;
            matched_b[bi] = true;
            self.active[ti].points.push((frame_index, centroids[bi].0, centroids[bi].1));
        }
        for (bi, &m) in matched_b.iter().enumerate() {
            if !m {
                self.active.push(Trajectory {
                    id: self.next_id,
                    points: vec![(frame_index, centroids[bi].0, centroids[bi].1)],
                    state: TrajectoryState::Active,
                });
                self.next_id += 1;
            }
        }
        let max_gap = self.cfg.max_gap;
        let closed = &mut self.closed;
        self.active.retain_mut(|t| {
            if frame_index - t.last_frame() > max_gap {
                t.state = TrajectoryState::Closed;
                closed.push(t.clone());
                false
            } else {
                true
            }
        });
    }

    /// Closes everything still active (end of stream).
    pub fn finish(&mut self) {
        for mut t in self.active.drain(..) {
            t.state = TrajectoryState::Closed;
            self.closed.push(t);
        }
    }

    pub fn take_closed(&mut self) -> Vec<Trajectory> {
        std::mem::take(&mut self.closed)
    }
}

/// Keeps trajectories that are long enough, straight enough, and move far
/// enough.
pub fn filter_trajectories(closed: Vec<Trajectory>, cfg: &TrackerConfig) -> Vec<Trajectory> {
    closed
        .into_iter()
        .filter(|t| {
            let (dx, dy) = t.net_displacement();
            let net = (dx * dx + dy * dy).sqrt();
            t.points.len() >= cfg.min_points
                && t.straightness() >= cfg.min_straightness
                && net >= cfg.min_displacement
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowDirection {
    Incoming,
    Outgoing,
}

/// Direction features: (cos θ, sin θ, net dx/|d|, net dy/|d|, mean speed)
/// with θ the net-displacement angle. The four directional components negate
/// exactly under trajectory reversal.
pub fn direction_features(t: &Trajectory) -> [f64; 5] {
    let (dx, dy) = t.net_displacement();
    let norm = (dx * dx + dy * dy).sqrt();
    if norm == 0.0 {
        return [0.0, 0.0, 0.0, 0.0, t.mean_speed()];
    }
    let (ux, uy) = (dx / norm, dy / norm);
    [ux, uy, ux, uy, t.mean_speed()]
}

/// Classifies a filtered trajectory. Ties (margin exactly zero) resolve to
/// incoming.
pub fn classify_direction(t: &Trajectory, model: &LinearSvmModel) -> FlowDirection {
    let features = direction_features(t);
    if model.margin(&features) >= 0.0 {
        FlowDirection::Incoming
    } else {
        FlowDirection::Outgoing
    }
}

/// Windowed incoming/outgoing totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowCounts {
    pub window_start: u32,
    pub window_end: u32,
    pub incoming: u32,
    pub outgoing: u32,
}

/// Buckets classified trajectories into fixed windows by their last frame.
pub fn flow_counts(
    classified: &[(Trajectory, FlowDirection)],
    window_frames: u32,
    stream_len: u32,
) -> Vec<FlowCounts> {
    assert!(window_frames > 0);
    let n_windows = stream_len.div_ceil(window_frames);
    let mut out: Vec<FlowCounts> = (0..n_windows)
        .map(|i| FlowCounts {
            window_start: i * window_frames,
            window_end: ((i + 1) * window_frames).min(stream_len),
            incoming: 0,
            outgoing: 0,
        })
        .collect();
    for (t, dir) in classified {
        let w = (t.last_frame() / window_frames).min(n_windows.saturating_sub(1)) as usize;
        match dir {
            FlowDirection::Incoming => out[w].incoming += 1,
            FlowDirection::Outgoing => out[w].outgoing += 1,
        }
    }
    out
}
