//! Deterministic synthetic scene generator with exact ground truth. Every
//! learned component in the project trains and validates against it.
//!
//! Agents are perspective-scaled body+head ellipse compounds with a stable
//! agent-space texture, drawn back-to-front over a static textured
//! background, with seeded Gaussian intensity noise on top. The same seed
//! always produces byte-identical frames and truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxClass, DetectionBox, Frame, GroundTruth, Roi};
use crate::segment::BinaryMask;
use crate::track::{FlowDirection, Trajectory, TrajectoryState};

/// Declared fight-scenario thresholds, asserted from truth channels: the
/// mean closing speed toward the nearest opponent during the approach phase
/// and the per-agent heading-change rate after onset.
pub const FIGHT_APPROACH_RATE_MIN: f64 = 2.0; // px/frame
pub const FIGHT_DIRECTION_CHANGES_PER_SEC_MIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SparseWalk,
    DenseCrowd,
    LaminarFlow,
    Fight,
    Dance,
}

impl Scenario {
    pub fn is_incident(&self) -> bool {
        matches!(self, Scenario::Fight)
    }

    pub fn max_agents(&self) -> u32 {
        match self {
            Scenario::SparseWalk => 10,
            _ => 75,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n_agents: u32,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    /// Agent height at the top row, pixels (perspective-far).
    #[serde(default = "default_h_top")]
    pub agent_h_top: f64,
    /// Agent height at the bottom row, pixels (perspective-near).
    #[serde(default = "default_h_bottom")]
    pub agent_h_bottom: f64,
    /// Fight onset in seconds; defaults to a quarter of the clip.
    #[serde(default)]
    pub onset_s: Option<f64>,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Multiplier on every agent's speed; 1.0 is the scenario's native pace.
    #[serde(default = "default_speed_scale")]
    pub speed_scale: f64,
}

fn default_duration() -> f64 {
    10.0
}
fn default_fps() -> f64 {
    25.0
}
fn default_width() -> u32 {
    704
}
fn default_height() -> u32 {
    576
}
fn default_h_top() -> f64 {
    62.0
}
fn default_h_bottom() -> f64 {
    110.0
}
fn default_noise() -> f64 {
    4.0
}
fn default_speed_scale() -> f64 {
    1.0
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, n_agents: u32, seed: u64) -> Self {
        ScenarioSpec {
            scenario,
            n_agents,
            duration_s: default_duration(),
            fps: default_fps(),
            seed,
            width: default_width(),
            height: default_height(),
            agent_h_top: default_h_top(),
            agent_h_bottom: default_h_bottom(),
            onset_s: None,
            noise_sigma: default_noise(),
            speed_scale: default_speed_scale(),
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: ScenarioSpec = toml::from_str(&text)
            .map_err(|e| Error::Format { path: path.to_owned(), reason: e.to_string() })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents > self.scenario.max_agents() {
            return Err(Error::Validation(format!(
                "n_agents = {} exceeds the {:?} bound of {}",
                self.n_agents,
                self.scenario,
                self.scenario.max_agents()
            )));
        }
        if self.duration_s <= 0.0 || self.fps <= 0.0 || self.speed_scale <= 0.0 {
            return Err(Error::Validation(
                "duration_s, fps, and speed_scale must be positive".into(),
            ));
        }
        if self.width < 64 || self.height < 64 {
            return Err(Error::Validation("frame dimensions must be at least 64".into()));
        }
        if self.agent_h_top < 60.0 {
            return Err(Error::Validation(
                "agent_h_top below 60 px would break the 30-px box minimum".into(),
            ));
        }
        if self.agent_h_bottom < self.agent_h_top {
            return Err(Error::Validation("agent_h_bottom must be >= agent_h_top".into()));
        }
        if self.agent_h_bottom > self.height as f64 * 0.95 {
            return Err(Error::Validation("agent_h_bottom too large for the frame".into()));
        }
        if let Some(o) = self.onset_s {
            if o < 0.0 || o >= self.duration_s {
                return Err(Error::Validation("onset_s must fall inside the clip".into()));
            }
        }
        Ok(())
    }

    pub fn n_frames(&self) -> u32 {
        (self.duration_s * self.fps).round() as u32
    }

    pub fn onset_frame(&self) -> Option<u32> {
        if self.scenario.is_incident() {
            let onset = self.onset_s.unwrap_or(self.duration_s * 0.25);
            Some((onset * self.fps).round() as u32)
        } else {
            None
        }
    }

    /// Agent height at feet row y.
    pub fn agent_height(&self, y: f64) -> f64 {
        self.agent_h_top
            + (self.agent_h_bottom - self.agent_h_top) * y / (self.height - 1) as f64
    }
}

/// One agent's true state at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub id: u32,
    pub group: u8,
    /// Feet position.
    pub x: f64,
    pub y: f64,
    pub height: f64,
    /// True displacement from the previous frame, pixels/frame.
    pub vx: f64,
    pub vy: f64,
}

/// The three part boxes implied by an agent's geometry.
#[derive(Debug, Clone, Copy)]
pub struct AgentBoxes {
    pub full: Roi,
    pub head_shoulders: Roi,
    pub head: Roi,
}

/// Part-box geometry for an agent at feet (x, y) with height h, clamped to
/// the frame.
pub fn agent_boxes(x: f64, y: f64, h: f64, frame_w: u32, frame_h: u32) -> AgentBoxes {
    let clamp_roi = |x0: f64, y0: f64, w: f64, hh: f64| -> Roi {
        let x0 = x0.max(0.0);
        let y0 = y0.max(0.0);
        let x1 = (x0 + w).min(frame_w as f64);
        let y1 = (y0 + hh).min(frame_h as f64);
        Roi::new(
            x0.round() as u32,
            y0.round() as u32,
            ((x1 - x0).round() as u32).max(1),
            ((y1 - y0).round() as u32).max(1),
        )
    };
    let full = clamp_roi(x - 0.25 * h, y - h, 0.5 * h, h);
    let head_r = 0.12 * h;
    let head_cy = y - h + head_r;
    let head = clamp_roi(x - 1.2 * head_r, head_cy - 1.2 * head_r, 2.4 * head_r, 2.4 * head_r);
    let head_shoulders = clamp_roi(x - 0.2 * h, y - h, 0.4 * h, 0.35 * h);
    AgentBoxes { full, head_shoulders, head }
}

/// Per-frame truth bundle.
#[derive(Debug, Clone)]
pub struct FrameTruth {
    pub truth: GroundTruth,
    pub agents: Vec<AgentTruth>,
}

#[derive(Debug, Clone)]
pub struct SceneTruth {
    pub frames: Vec<FrameTruth>,
    pub onset_frame: Option<u32>,
}

struct Agent {
    id: u32,
    group: u8,
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    shade: u8,
    // dance state
    anchor: (f64, f64),
    amplitude: f64,
    phase: f64,
    osc_dir: (f64, f64),
    // fight state
    next_resample: u32,
    prev_x: f64,
    prev_y: f64,
}

struct World {
    spec: ScenarioSpec,
    agents: Vec<Agent>,
    background: Vec<u8>,
    rng: ChaCha20Rng,
    onset: Option<u32>,
    omega: f64,
}

impl World {
    fn new(spec: &ScenarioSpec) -> Result<World> {
        spec.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        let background = render_background(spec, &mut rng);
        let (w, h) = (spec.width as f64, spec.height as f64);

        // feasible feet-row band: the whole body must fit
        let y_lo = (1..spec.height)
            .map(|y| y as f64)
            .find(|&y| y - spec.agent_height(y) >= 1.0)
            .unwrap_or(spec.agent_h_top + 1.0);
        let y_hi = h - 2.0;

        let mut agents = Vec::with_capacity(spec.n_agents as usize);
        for id in 0..spec.n_agents {
            let group = (id >= spec.n_agents / 2) as u8;
            let y = rng.gen_range(y_lo..y_hi);
            let margin = 0.25 * spec.agent_height(y) + 2.0;
            let x = match spec.scenario {
                Scenario::Fight => {
                    // groups start in opposite thirds
                    if group == 0 {
                        rng.gen_range(margin..w * 0.33)
                    } else {
                        rng.gen_range(w * 0.67..w - margin)
                    }
                }
                _ => rng.gen_range(margin..w - margin),
            };
            let speed = spec.speed_scale
                * match spec.scenario {
                    Scenario::SparseWalk => rng.gen_range(0.7..1.5),
                    Scenario::DenseCrowd => rng.gen_range(0.3..1.0),
                    Scenario::LaminarFlow => rng.gen_range(1.6..2.6),
                    Scenario::Fight => rng.gen_range(3.2..4.5),
                    Scenario::Dance => 0.0,
                };
            let heading = match spec.scenario {
                Scenario::LaminarFlow => rng.gen_range(-0.06..0.06f64),
                _ => rng.gen_range(0.0..std::f64::consts::TAU),
            };
            agents.push(Agent {
                id,
                group,
                x,
                y,
                heading,
                speed,
                shade: rng.gen_range(28..62),
                anchor: (x, y),
                amplitude: rng.gen_range(10.0..16.0),
                phase: rng.gen_range(-0.15..0.15f64),
                osc_dir: (1.0, 0.12),
                next_resample: 0,
                prev_x: x,
                prev_y: y,
            });
        }
        let omega = std::f64::consts::TAU / (1.6 * spec.fps); // 1.6 s oscillation period
        Ok(World { spec: spec.clone(), agents, background, rng, onset: spec.onset_frame(), omega })
    }

    fn bounds_for(&self, y: f64) -> (f64, f64, f64, f64) {
        let h = self.spec.agent_height(y);
        let margin = 0.25 * h + 2.0;
        let y_lo = (1..self.spec.height)
            .map(|yy| yy as f64)
            .find(|&yy| yy - self.spec.agent_height(yy) >= 1.0)
            .unwrap_or(self.spec.agent_h_top + 1.0);
        (margin, self.spec.width as f64 - margin, y_lo, self.spec.height as f64 - 2.0)
    }

    fn step(&mut self, frame: u32) {
        for a in self.agents.iter_mut() {
            a.prev_x = a.x;
            a.prev_y = a.y;
        }
        let fighting = self.onset.map_or(false, |o| frame >= o);
        match self.spec.scenario {
            Scenario::SparseWalk | Scenario::DenseCrowd => self.step_walk(0.12),
            Scenario::LaminarFlow => self.step_laminar(),
            Scenario::Dance => self.step_dance(frame),
            Scenario::Fight => {
                if fighting {
                    self.step_fight(frame);
                } else {
                    self.step_walk_slow();
                }
            }
        }
    }

    fn step_walk(&mut self, turn_sigma: f64) {
        let normal = Normal::new(0.0, turn_sigma).unwrap();
        for i in 0..self.agents.len() {
            let turn = normal.sample(&mut self.rng);
            let a = &mut self.agents[i];
            a.heading += turn;
            let (dx, dy) = (a.heading.cos() * a.speed, a.heading.sin() * a.speed * 0.5);
            let (x_lo, x_hi, y_lo, y_hi) = self.bounds_for(self.agents[i].y);
            let a = &mut self.agents[i];
            a.x += dx;
            a.y += dy;
            if a.x < x_lo || a.x > x_hi {
                a.heading = std::f64::consts::PI - a.heading;
                a.x = a.x.clamp(x_lo, x_hi);
            }
            if a.y < y_lo || a.y > y_hi {
                a.heading = -a.heading;
                a.y = a.y.clamp(y_lo, y_hi);
            }
        }
    }

    fn step_walk_slow(&mut self) {
        let normal = Normal::new(0.0, 0.1).unwrap();
        for i in 0..self.agents.len() {
            let turn = normal.sample(&mut self.rng);
            let (x_lo, x_hi, y_lo, y_hi) = self.bounds_for(self.agents[i].y);
            let a = &mut self.agents[i];
            a.heading += turn;
            a.x += a.heading.cos() * 0.5 * self.spec.speed_scale;
            a.y += a.heading.sin() * 0.25 * self.spec.speed_scale;
            if a.x < x_lo || a.x > x_hi {
                a.heading = std::f64::consts::PI - a.heading;
                a.x = a.x.clamp(x_lo, x_hi);
            }
            if a.y < y_lo || a.y > y_hi {
                a.heading = -a.heading;
                a.y = a.y.clamp(y_lo, y_hi);
            }
        }
    }

    fn step_laminar(&mut self) {
        for i in 0..self.agents.len() {
            let jitter: f64 = self.rng.gen_range(-0.02..0.02);
            let (x_lo, x_hi, y_lo, y_hi) = self.bounds_for(self.agents[i].y);
            let a = &mut self.agents[i];
            a.heading = (a.heading + jitter).clamp(-0.12, 0.12);
            a.x += a.heading.cos() * a.speed;
            a.y += a.heading.sin() * a.speed * 0.3;
            a.y = a.y.clamp(y_lo, y_hi);
            if a.x > x_hi {
                // wrap to the left edge: one completed pass
                a.x = x_lo + (a.x - x_hi);
                a.prev_x = a.x; // teleport, not motion
            }
        }
    }

    fn step_dance(&mut self, frame: u32) {
        let t = frame as f64;
        for a in self.agents.iter_mut() {
            let s = a.amplitude * (self.omega * t + a.phase).sin();
            let norm = (a.osc_dir.0 * a.osc_dir.0 + a.osc_dir.1 * a.osc_dir.1).sqrt();
            a.x = a.anchor.0 + s * a.osc_dir.0 / norm;
            a.y = a.anchor.1 + s * a.osc_dir.1 / norm;
        }
    }

    fn step_fight(&mut self, frame: u32) {
        let positions: Vec<(f64, f64, u8)> =
            self.agents.iter().map(|a| (a.x, a.y, a.group)).collect();
        let resample_frames = (0.4 * self.spec.fps).round().max(1.0) as u32;
        for i in 0..self.agents.len() {
            let (x, y, group) = positions[i];
            // nearest opponent
            let target = positions
                .iter()
                .filter(|p| p.2 != group)
                .min_by(|a, b| {
                    let da = (a.0 - x).powi(2) + (a.1 - y).powi(2);
                    let db = (b.0 - x).powi(2) + (b.1 - y).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .copied();
            let due = frame >= self.agents[i].next_resample;
            if due {
                let jitter: f64 = self.rng.gen_range(-0.6..0.6);
                let gap: u32 = self.rng.gen_range(resample_frames / 2..=resample_frames);
                let a = &mut self.agents[i];
                if let Some((tx, ty, _)) = target {
                    let d = ((tx - x).powi(2) + (ty - y).powi(2)).sqrt();
                    let base = (ty - y).atan2(tx - x);
                    // near contact, dart in abrupt directions around the melee
                    a.heading = if d < 30.0 {
                        base + jitter * 2.5
                    } else {
                        base + jitter
                    };
                } else {
                    a.heading += jitter * 3.0;
                }
                a.next_resample = frame + gap;
            }
            let (x_lo, x_hi, y_lo, y_hi) = self.bounds_for(self.agents[i].y);
            let a = &mut self.agents[i];
            a.x += a.heading.cos() * a.speed;
            a.y += a.heading.sin() * a.speed * 0.5;
            if a.x < x_lo || a.x > x_hi {
                a.heading = std::f64::consts::PI - a.heading;
                a.x = a.x.clamp(x_lo, x_hi);
            }
            if a.y < y_lo || a.y > y_hi {
                a.heading = -a.heading;
                a.y = a.y.clamp(y_lo, y_hi);
            }
        }
    }

    fn frame_truth(&self, frame: u32) -> FrameTruth {
        let (w, h) = (self.spec.width, self.spec.height);
        let incident = self.onset.map_or(false, |o| frame >= o);
        let center = w as f64 / 2.0;
        let mut flow_in = 0u32;
        let mut flow_out = 0u32;
        let mut agents = Vec::with_capacity(self.agents.len());
        let mut boxes = Vec::with_capacity(self.agents.len());
        for a in &self.agents {
            let height = self.spec.agent_height(a.y);
            let (vx, vy) = (a.x - a.prev_x, a.y - a.prev_y);
            if a.prev_x < center && a.x >= center {
                flow_in += 1;
            } else if a.prev_x >= center && a.x < center {
                flow_out += 1;
            }
            agents.push(AgentTruth { id: a.id, group: a.group, x: a.x, y: a.y, height, vx, vy });
            boxes.push(DetectionBox {
                roi: agent_boxes(a.x, a.y, height, w, h).full,
                class: BoxClass::FullBody,
                score: 1.0,
            });
        }
        FrameTruth {
            truth: GroundTruth {
                frame_index: frame,
                count: self.agents.len() as u32,
                boxes,
                incident,
                flow_in,
                flow_out,
            },
            agents,
        }
    }

    fn render(&self, frame: u32) -> Frame {
        let (w, h) = (self.spec.width as usize, self.spec.height as usize);
        let mut pixels = self.background.clone();
        // far agents first so near ones occlude them
        let mut order: Vec<usize> = (0..self.agents.len()).collect();
        order.sort_by(|&a, &b| {
            self.agents[a]
                .y
                .partial_cmp(&self.agents[b].y)
                .unwrap()
                .then(self.agents[a].id.cmp(&self.agents[b].id))
        });
        for &i in &order {
            let a = &self.agents[i];
            let height = self.spec.agent_height(a.y);
            draw_agent(&mut pixels, w, h, a.x, a.y, height, a.shade);
        }
        // seeded per-frame Gaussian noise
        if self.spec.noise_sigma > 0.0 {
            let mut rng = ChaCha20Rng::seed_from_u64(
                self.spec.seed ^ (frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let normal = Normal::new(0.0f32, self.spec.noise_sigma as f32).unwrap();
            for px in pixels.iter_mut() {
                let n = normal.sample(&mut rng);
                *px = (*px as f32 + n).round().clamp(0.0, 255.0) as u8;
            }
        }
        Frame::new(
            self.spec.width,
            self.spec.height,
            pixels,
            frame,
            Frame::timestamp_for(frame, self.spec.fps),
        )
        .expect("generated frame is valid")
    }
}

fn render_background(spec: &ScenarioSpec, rng: &mut ChaCha20Rng) -> Vec<u8> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    // bilinear value noise on a 16-px lattice, range [110, 170]
    let cell = 16usize;
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(110.0..170.0)).collect();
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let gy = y / cell;
        let fy = (y % cell) as f64 / cell as f64;
        for x in 0..w {
            let gx = x / cell;
            let fx = (x % cell) as f64 / cell as f64;
            let v00 = lattice[gy * gw + gx];
            let v10 = lattice[gy * gw + gx + 1];
            let v01 = lattice[(gy + 1) * gw + gx];
            let v11 = lattice[(gy + 1) * gw + gx + 1];
            let v = v00 * (1.0 - fx) * (1.0 - fy)
                + v10 * fx * (1.0 - fy)
                + v01 * (1.0 - fx) * fy
                + v11 * fx * fy;
            out[y * w + x] = v.round() as u8;
        }
    }
    out
}

fn draw_agent(pixels: &mut [u8], w: usize, h: usize, x: f64, y: f64, height: f64, shade: u8) {
    // body ellipse
    let body_cy = y - 0.40 * height;
    let body_a = 0.19 * height;
    let body_b = 0.40 * height;
    fill_ellipse(pixels, w, h, x, body_cy, body_a, body_b, shade, true);
    // head
    let head_r = 0.12 * height;
    let head_cy = y - height + head_r;
    let head_shade = shade.saturating_add(16);
    fill_ellipse(pixels, w, h, x, head_cy, head_r, head_r, head_shade, false);
}

#[allow(clippy::too_many_arguments)]
fn fill_ellipse(
    pixels: &mut [u8],
    w: usize,
    h: usize,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    shade: u8,
    textured: bool,
) {
    let x0 = ((cx - a).floor().max(0.0)) as usize;
    let x1 = ((cx + a).ceil().min(w as f64 - 1.0)) as usize;
    let y0 = ((cy - b).floor().max(0.0)) as usize;
    let y1 = ((cy + b).ceil().min(h as f64 - 1.0)) as usize;
    let ox = cx.round() as i64;
    let oy = cy.round() as i64;
    for py in y0..=y1 {
        for px in x0..=x1 {
            let dx = (px as f64 - cx) / a;
            let dy = (py as f64 - cy) / b;
            if dx * dx + dy * dy <= 1.0 {
                let v = if textured {
                    // stable agent-space texture so block matching can lock
                    // on; amplitude stays small enough that every body pixel
                    // keeps clear contrast against the background
                    let tx = (px as i64 - ox).rem_euclid(4);
                    let ty = (py as i64 - oy).rem_euclid(4);
                    shade.saturating_add(((tx + ty * 2) * 2) as u8)
                } else {
                    shade
                };
                pixels[py * w + px] = v;
            }
        }
    }
}

/// Renders the true foreground silhouette (union of agent bodies) for one
/// frame of truth.
pub fn render_silhouette(agents: &[AgentTruth], width: u32, height: u32) -> BinaryMask {
    let (w, h) = (width as usize, height as usize);
    let mut bits = vec![false; w * h];
    for a in agents {
        let mark = |bits: &mut Vec<bool>, cx: f64, cy: f64, sa: f64, sb: f64| {
            let x0 = ((cx - sa).floor().max(0.0)) as usize;
            let x1 = ((cx + sa).ceil().min(w as f64 - 1.0)) as usize;
            let y0 = ((cy - sb).floor().max(0.0)) as usize;
            let y1 = ((cy + sb).ceil().min(h as f64 - 1.0)) as usize;
            for py in y0..=y1 {
                for px in x0..=x1 {
                    let dx = (px as f64 - cx) / sa;
                    let dy = (py as f64 - cy) / sb;
                    if dx * dx + dy * dy <= 1.0 {
                        bits[py * w + px] = true;
                    }
                }
            }
        };
        mark(&mut bits, a.x, a.y - 0.40 * a.height, 0.19 * a.height, 0.40 * a.height);
        let head_r = 0.12 * a.height;
        mark(&mut bits, a.x, a.y - a.height + head_r, head_r, head_r);
    }
    BinaryMask::from_bits(width, height, bits)
}

/// Streams frames and truth to a callback without holding the clip in
/// memory.
pub fn generate_streaming(
    spec: &ScenarioSpec,
    mut sink: impl FnMut(Frame, FrameTruth) -> Result<()>,
) -> Result<()> {
    let mut world = World::new(spec)?;
    for frame in 0..spec.n_frames() {
        if frame > 0 {
            world.step(frame);
        }
        sink(world.render(frame), world.frame_truth(frame))?;
    }
    Ok(())
}

/// Generates the whole clip in memory. Prefer [`generate_streaming`] for
/// long or high-resolution clips.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<Frame>, SceneTruth)> {
    let mut frames = Vec::with_capacity(spec.n_frames() as usize);
    let mut truth = SceneTruth { frames: Vec::new(), onset_frame: spec.onset_frame() };
    generate_streaming(spec, |frame, ft| {
        frames.push(frame);
        truth.frames.push(ft);
        Ok(())
    })?;
    Ok((frames, truth))
}

/// Labeled trajectories for the direction classifier: incoming means
/// movement along +x (the configured gate axis). A `noise` fraction of steps
/// move in a uniformly random direction.
pub fn labeled_trajectories(
    n: usize,
    noise: f64,
    seed: u64,
) -> Vec<(Trajectory, FlowDirection)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.2).unwrap();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let incoming = i % 2 == 0;
        let base = if incoming { 0.0 } else { std::f64::consts::PI };
        let len = rng.gen_range(15..40usize);
        let mut x: f64 = rng.gen_range(100.0..500.0);
        let mut y: f64 = rng.gen_range(100.0..400.0);
        let mut points = Vec::with_capacity(len);
        for f in 0..len {
            points.push((f as u32, x, y));
            let dir = if rng.gen_bool(noise) {
                rng.gen_range(0.0..std::f64::consts::TAU)
            } else {
                base + jitter.sample(&mut rng)
            };
            let speed = rng.gen_range(1.0..3.0);
            x += dir.cos() * speed;
            y += dir.sin() * speed;
        }
        out.push((
            Trajectory { id: i as u64, points, state: TrajectoryState::Closed },
            if incoming { FlowDirection::Incoming } else { FlowDirection::Outgoing },
        ));
    }
    out
}

/// Mean closing speed toward the nearest opponent over `frames`, from truth.
pub fn mean_approach_rate(truth: &SceneTruth, from: u32, to: u32) -> f64 {
    let mut rates = Vec::new();
    for w in truth.frames.windows(2) {
        let f0 = &w[0];
        let f1 = &w[1];
        if f1.truth.frame_index <= from || f1.truth.frame_index > to {
            continue;
        }
        for a in &f0.agents {
            let d0 = nearest_opponent_distance(a, &f0.agents);
            let a1 = f1.agents.iter().find(|b| b.id == a.id).unwrap();
            let d1 = nearest_opponent_distance(a1, &f1.agents);
            if let (Some(d0), Some(d1)) = (d0, d1) {
                rates.push(d0 - d1); // positive = closing
            }
        }
    }
    if rates.is_empty() {
        return 0.0;
    }
    rates.iter().sum::<f64>() / rates.len() as f64
}

fn nearest_opponent_distance(a: &AgentTruth, agents: &[AgentTruth]) -> Option<f64> {
    agents
        .iter()
        .filter(|b| b.group != a.group)
        .map(|b| ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt())
        .min_by(|p, q| p.partial_cmp(q).unwrap())
}

/// Per-agent heading changes above 30° per second, from truth velocities.
pub fn direction_change_rate(truth: &SceneTruth, from: u32, fps: f64) -> f64 {
    let mut changes = 0usize;
    let mut steps = 0usize;
    for w in truth.frames.windows(2) {
        if w[1].truth.frame_index <= from {
            continue;
        }
        for a in &w[0].agents {
            let b = w[1].agents.iter().find(|b| b.id == a.id).unwrap();
            let s0 = (a.vx * a.vx + a.vy * a.vy).sqrt();
            let s1 = (b.vx * b.vx + b.vy * b.vy).sqrt();
            if s0 < 0.2 || s1 < 0.2 {
                continue;
            }
            let cos = (a.vx * b.vx + a.vy * b.vy) / (s0 * s1);
            steps += 1;
            if cos < 30f64.to_radians().cos() {
                changes += 1;
            }
        }
    }
    if steps == 0 {
        return 0.0;
    }
    let n_agents = truth.frames[0].agents.len().max(1);
    changes as f64 / (steps as f64 / n_agents as f64) * fps / n_agents as f64
}
