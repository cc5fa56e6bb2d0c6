//! Per-pixel feature channels pooled into cells.
//!
//! Eight channels: Sobel gradient magnitude (L1), six unsigned orientation
//! bins over [0°,180°) weighted by magnitude, and a 3x3 local-variance
//! texture channel. Channels are sum-pooled into `cell_size` x `cell_size`
//! cells; partial cells at the right/bottom edge pool whatever they cover.

use crate::model::Frame;

pub const NUM_CHANNELS: usize = 8;
pub const HOG_BINS: usize = 6;
pub const CHAN_GRAD_MAG: usize = 0;
pub const CHAN_HOG0: usize = 1;
pub const CHAN_TEXTURE: usize = 7;

/// Default cell size in pixels.
pub const DEFAULT_CELL_SIZE: usize = 4;

/// A plain grayscale buffer. Unlike [`Frame`] it carries no stream metadata
/// and no minimum size, so pyramid levels can shrink freely.
#[derive(Debug, Clone)]
pub struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<u8>,
}

impl Plane {
    pub fn new(w: usize, h: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), w * h);
        Plane { w, h, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.w + x]
    }

    /// Bilinear resize with 16-bit fixed-point weights and the pixel-center
    /// convention. Runs in the per-frame hot path.
    pub fn resize(&self, nw: usize, nh: usize) -> Plane {
        assert!(nw > 0 && nh > 0);
        const ONE: u64 = 1 << 16;
        let plan = |n_out: usize, n_in: usize| -> Vec<(usize, usize, u64)> {
            let scale = n_in as f64 / n_out as f64;
            (0..n_out)
                .map(|i| {
                    let f = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                    let i0 = f.floor() as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    let w = ((f - i0 as f64) * ONE as f64).round() as u64;
                    (i0, i1, w)
                })
                .collect()
        };
        let xs = plan(nw, self.w);
        let ys = plan(nh, self.h);
        let mut data = vec![0u8; nw * nh];
        for (y, &(y0, y1, wy)) in ys.iter().enumerate() {
            let row0 = y0 * self.w;
            let row1 = y1 * self.w;
            let out = &mut data[y * nw..(y + 1) * nw];
            for (o, &(x0, x1, wx)) in out.iter_mut().zip(&xs) {
                let top = self.data[row0 + x0] as u64 * (ONE - wx)
                    + self.data[row0 + x1] as u64 * wx;
                let bot = self.data[row1 + x0] as u64 * (ONE - wx)
                    + self.data[row1 + x1] as u64 * wx;
                let v = top * (ONE - wy) + bot * wy;
                *o = ((v + (1 << 31)) >> 32) as u8;
            }
        }
        Plane::new(nw, nh, data)
    }

    /// Crops `[x0, x0+w) x [y0, y0+h)` with edge replication outside bounds.
    pub fn crop_replicated(&self, x0: i64, y0: i64, w: usize, h: usize) -> Plane {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let sx = (x0 + x).clamp(0, self.w as i64 - 1) as usize;
                let sy = (y0 + y).clamp(0, self.h as i64 - 1) as usize;
                data.push(self.get(sx, sy));
            }
        }
        Plane::new(w, h, data)
    }
}

impl From<&Frame> for Plane {
    fn from(f: &Frame) -> Self {
        Plane { w: f.width as usize, h: f.height as usize, data: f.pixels.clone() }
    }
}

/// Cell-pooled channel grids for one image.
#[derive(Debug, Clone)]
pub struct ChannelStack {
    pub cell_size: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    /// Layout: `[channel][cy][cx]`, flattened.
    data: Vec<f32>,
}

impl ChannelStack {
    #[inline]
    pub fn at(&self, channel: usize, cx: usize, cy: usize) -> f32 {
        self.data[channel * self.grid_w * self.grid_h + cy * self.grid_w + cx]
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn channel_stride(&self) -> usize {
        self.grid_w * self.grid_h
    }

    /// Flattens the window of cells at `(cx0, cy0)` of size `wc x hc` into a
    /// feature vector laid out `[channel][cy][cx]` — the layout boosted
    /// trees index into.
    pub fn window_features(&self, cx0: usize, cy0: usize, wc: usize, hc: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(NUM_CHANNELS * wc * hc);
        for ch in 0..NUM_CHANNELS {
            for cy in 0..hc {
                for cx in 0..wc {
                    out.push(self.at(ch, cx0 + cx, cy0 + cy));
                }
            }
        }
        out
    }
}

/// Unsigned orientation bin for a gradient `(gx, gy)`, 6 bins over [0°,180°).
///
/// The vector is first normalized so the angle lies in [0°,180°): if gy < 0,
/// or gy == 0 and gx < 0, both components are negated. The tangent compares
/// run in integer arithmetic; Sobel gradients are small enough integers that
/// the rational approximations of tan 30°/tan 60° never flip a boundary.
#[inline]
pub fn orientation_bin(gx: i32, gy: i32) -> usize {
    let (gx, gy) = if gy < 0 || (gy == 0 && gx < 0) { (-gx, -gy) } else { (gx, gy) };
    const T30_NUM: i64 = 577_350_269; // tan 30° * 1e9
    const T60_NUM: i64 = 1_732_050_808; // tan 60° * 1e9
    const DEN: i64 = 1_000_000_000;
    let y = gy as i64 * DEN;
    if gx > 0 {
        let x = gx as i64;
        if y < x * T30_NUM {
            0
        } else if y < x * T60_NUM {
            1
        } else {
            2
        }
    } else if gx == 0 {
        3 // 90° falls in [90°,120°)
    } else {
        let nx = -(gx as i64);
        if y > nx * T60_NUM {
            3
        } else if y > nx * T30_NUM {
            4
        } else {
            5
        }
    }
}

/// Computes the eight channels of `plane` and pools them into cells.
///
/// Border pixels (1-px frame) contribute zero to every channel. The pass
/// rolls per-row column aggregates so each pixel costs a handful of integer
/// operations; this is the hottest loop of the whole pipeline.
pub fn compute_channels(plane: &Plane, cell_size: usize) -> ChannelStack {
    assert!(cell_size >= 1);
    let (w, h) = (plane.w, plane.h);
    let grid_w = w.div_ceil(cell_size);
    let grid_h = h.div_ceil(cell_size);
    let stride = grid_w * grid_h;
    let mut data = vec![0f32; NUM_CHANNELS * stride];
    if w < 3 || h < 3 {
        return ChannelStack { cell_size, grid_w, grid_h, data };
    }
    let px = &plane.data;
    let col_cell: Vec<u32> = (0..w).map(|x| (x / cell_size) as u32).collect();

    // horizontal 1-2-1 convolution of one raw row
    let h121 = |row: usize, out: &mut [i32]| {
        let r = &px[row * w..(row + 1) * w];
        for x in 1..w - 1 {
            out[x] = r[x - 1] as i32 + 2 * r[x] as i32 + r[x + 1] as i32;
        }
    };
    // rotating horizontal convolutions of rows y-1, y, y+1
    let mut h_m = vec![0i32; w];
    let mut h_0 = vec![0i32; w];
    let mut h_p = vec![0i32; w];
    h121(0, &mut h_m);
    h121(1, &mut h_0);
    h121(2, &mut h_p);

    let mut v121 = vec![0i32; w];
    let mut vsum = vec![0i32; w];
    let mut vsq = vec![0i32; w];
    for y in 1..h - 1 {
        if y > 1 {
            std::mem::swap(&mut h_m, &mut h_0);
            std::mem::swap(&mut h_0, &mut h_p);
            h121(y + 1, &mut h_p);
        }
        let up = &px[(y - 1) * w..y * w];
        let cur = &px[y * w..(y + 1) * w];
        let dn = &px[(y + 1) * w..(y + 2) * w];
        for x in 0..w {
            let (a, b, c) = (up[x] as i32, cur[x] as i32, dn[x] as i32);
            v121[x] = a + 2 * b + c;
            vsum[x] = a + b + c;
            vsq[x] = a * a + b * b + c * c;
        }
        let cy = y / cell_size;
        let row_cell = cy * grid_w;
        for x in 1..w - 1 {
            let gx = v121[x + 1] - v121[x - 1];
            let gy = h_p[x] - h_m[x];
            let mag = (gx.abs() + gy.abs()) as f32;
            let cell = row_cell + col_cell[x] as usize;
            data[CHAN_GRAD_MAG * stride + cell] += mag;
            if mag > 0.0 {
                let bin = orientation_bin(gx, gy);
                data[(CHAN_HOG0 + bin) * stride + cell] += mag;
            }
            let s9 = (vsum[x - 1] + vsum[x] + vsum[x + 1]) as f32;
            let sq9 = (vsq[x - 1] + vsq[x] + vsq[x + 1]) as f32;
            let var = (sq9 - s9 * s9 / 9.0) / 9.0;
            data[CHAN_TEXTURE * stride + cell] += var;
        }
    }
    ChannelStack { cell_size, grid_w, grid_h, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Plane {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(f(x, y));
            }
        }
        Plane::new(w, h, data)
    }

    /// Independent per-pixel recomputation: direct 3x3 convolutions, atan2
    /// binning, then pooling.
    fn channels_oracle(p: &Plane, cell: usize) -> Vec<f32> {
        let (w, h) = (p.w, p.h);
        let gw = w.div_ceil(cell);
        let gh = h.div_ceil(cell);
        let stride = gw * gh;
        let mut out = vec![0f32; NUM_CHANNELS * stride];
        let kx: [[i32; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
        let ky: [[i32; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut gx = 0;
                let mut gy = 0;
                let mut vals = Vec::with_capacity(9);
                for jy in 0..3 {
                    for jx in 0..3 {
                        let v = p.get(x + jx - 1, y + jy - 1) as i32;
                        gx += kx[jy][jx] * v;
                        gy += ky[jy][jx] * v;
                        vals.push(v as f64);
                    }
                }
                let cell_idx = (y / cell) * gw + x / cell;
                let mag = (gx.abs() + gy.abs()) as f32;
                out[CHAN_GRAD_MAG * stride + cell_idx] += mag;
                if mag > 0.0 {
                    let (ngx, ngy) =
                        if gy < 0 || (gy == 0 && gx < 0) { (-gx, -gy) } else { (gx, gy) };
                    let angle = (ngy as f64).atan2(ngx as f64).to_degrees();
                    let bin = ((angle / 30.0).floor() as usize).min(HOG_BINS - 1);
                    out[(CHAN_HOG0 + bin) * stride + cell_idx] += mag;
                }
                let mean: f64 = vals.iter().sum::<f64>() / 9.0;
                let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0;
                out[CHAN_TEXTURE * stride + cell_idx] += var as f32;
            }
        }
        out
    }

    #[test]
    fn uniform_frame_all_channels_zero() {
        let p = plane(64, 64, |_, _| 130);
        let stack = compute_channels(&p, 4);
        assert!(stack.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_energy_in_bin_zero() {
        // Horizontal gradient → unsigned orientation 0° → HoG bin 0.
        let p = plane(64, 64, |x, _| if x >= 32 { 200 } else { 0 });
        let stack = compute_channels(&p, 4);
        let stride = stack.channel_stride();
        let bin0: f32 = stack.data()[CHAN_HOG0 * stride..(CHAN_HOG0 + 1) * stride].iter().sum();
        assert!(bin0 > 0.0);
        for b in 1..HOG_BINS {
            let s: f32 =
                stack.data()[(CHAN_HOG0 + b) * stride..(CHAN_HOG0 + b + 1) * stride].iter().sum();
            assert_eq!(s, 0.0, "bin {b} should be empty");
        }
    }

    #[test]
    fn random_frame_matches_per_pixel_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(21);
        let mut data = vec![0u8; 64 * 64];
        rng.fill(&mut data[..]);
        let p = Plane::new(64, 64, data);
        let stack = compute_channels(&p, 4);
        let oracle = channels_oracle(&p, 4);
        assert_eq!(stack.data().len(), oracle.len());
        for (i, (&a, &b)) in stack.data().iter().zip(&oracle).enumerate() {
            assert!((a - b).abs() <= 1e-3 * b.abs().max(1.0), "index {i}: {a} vs {b}");
        }
    }

    #[test]
    fn orientation_bins_cover_all_integer_gradients() {
        for gx in -20..=20 {
            for gy in -20..=20 {
                if gx == 0 && gy == 0 {
                    continue;
                }
                let bin = orientation_bin(gx, gy);
                assert!(bin < HOG_BINS);
                // consistency with the atan2 definition
                let (ngx, ngy) = if gy < 0 || (gy == 0 && gx < 0) { (-gx, -gy) } else { (gx, gy) };
                let angle = (ngy as f64).atan2(ngx as f64).to_degrees();
                let expect = ((angle / 30.0).floor() as usize).min(HOG_BINS - 1);
                assert_eq!(bin, expect, "gx={gx} gy={gy} angle={angle}");
            }
        }
    }

    #[test]
    fn resize_preserves_uniform() {
        let p = plane(64, 64, |_, _| 77);
        let r = p.resize(40, 24);
        assert!(r.data.iter().all(|&v| v == 77));
    }

    #[test]
    fn partial_cells_pool_remainder() {
        let p = plane(66, 66, |x, _| (x % 2) as u8 * 100);
        let stack = compute_channels(&p, 4);
        assert_eq!(stack.grid_w, 17);
        assert_eq!(stack.grid_h, 17);
    }
}
