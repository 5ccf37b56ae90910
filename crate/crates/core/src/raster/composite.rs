//! Depth-sorted, tile-binned front-to-back compositing and its adjoint.

use rayon::prelude::*;

use super::project::{project_one, Projection, SplatGrad, SIGMA_CUTOFF};
use crate::camera::Camera;
use crate::gaussian::Gaussian3D;

pub const TILE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance falls below this.
pub const T_MIN: f64 = 1e-4;
/// Extra pixels around the cutoff disc when binning.
const BIN_MARGIN: f64 = 0.5;

/// Projected splats in depth order, binned into tiles.
pub(crate) struct Frame {
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    /// Sorted by (depth, input index).
    pub splats: Vec<Projection>,
    /// Per tile, positions into `splats` in depth order.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
}

pub(crate) struct PixelOut {
    pub rgb: [f64; 3],
    pub transmittance: f64,
    pub depth: f64,
}

/// One contribution recorded for the backward pass.
struct Hit {
    pos: u32,
    alpha: f64,
    weight: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

impl Frame {
    pub fn new(gaussians: &[Gaussian3D], camera: &Camera, background: [f64; 3]) -> Frame {
        let mut splats: Vec<Projection> = gaussians
            .iter()
            .enumerate()
            .filter_map(|(i, g)| project_one(g, i, camera))
            .collect();
        splats.sort_by(|a, b| {
            a.splat
                .depth
                .total_cmp(&b.splat.depth)
                .then(a.splat.index.cmp(&b.splat.index))
        });
        let (width, height) = (camera.width(), camera.height());
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (pos, p) in splats.iter().enumerate() {
            let s = &p.splat;
            let r = s.radius + BIN_MARGIN;
            let (x0, x1) = (s.mean2d[0] - r, s.mean2d[0] + r);
            let (y0, y1) = (s.mean2d[1] - r, s.mean2d[1] + r);
            if x1 < 0.0 || y1 < 0.0 || x0 > (width - 1) as f64 || y0 > (height - 1) as f64 {
                continue;
            }
            let px0 = x0.max(0.0).ceil() as usize;
            let py0 = y0.max(0.0).ceil() as usize;
            let px1 = (x1.floor() as usize).min(width - 1);
            let py1 = (y1.floor() as usize).min(height - 1);
            if px0 > px1 || py0 > py1 {
                continue;
            }
            for ty in py0 / TILE..=py1 / TILE {
                for tx in px0 / TILE..=px1 / TILE {
                    tiles[ty * tiles_x + tx].push(pos as u32);
                }
            }
        }
        Frame { width, height, background, splats, tiles, tiles_x }
    }

    /// Alpha of splat `pos` at pixel `(px, py)`, or `None` when it is skipped.
    #[inline]
    fn alpha_at(&self, pos: u32, px: f64, py: f64) -> Option<(f64, bool, f64, f64)> {
        let s = &self.splats[pos as usize].splat;
        let dx = px - s.mean2d[0];
        let dy = py - s.mean2d[1];
        let [a, b, c] = s.conic;
        let maha = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
        if maha > SIGMA_CUTOFF * SIGMA_CUTOFF {
            return None;
        }
        let raw = s.opacity * (-0.5 * maha).exp();
        if raw < ALPHA_MIN {
            return None;
        }
        let clamped = raw > ALPHA_MAX;
        Some((if clamped { ALPHA_MAX } else { raw }, clamped, dx, dy))
    }

    /// Composites one pixel over the given depth-ordered candidates.
    fn pixel(&self, px: usize, py: usize, candidates: &[u32], mut hits: Option<&mut Vec<Hit>>) -> PixelOut {
        let (fx, fy) = (px as f64, py as f64);
        let mut rgb = [0.0; 3];
        let mut depth = 0.0;
        let mut t = 1.0;
        for &pos in candidates {
            let Some((alpha, clamped, dx, dy)) = self.alpha_at(pos, fx, fy) else { continue };
            let s = &self.splats[pos as usize].splat;
            let weight = alpha * t;
            for k in 0..3 {
                rgb[k] += s.rgb[k] * weight;
            }
            depth += s.depth * weight;
            if let Some(h) = hits.as_deref_mut() {
                h.push(Hit { pos, alpha, weight, clamped, dx, dy });
            }
            t *= 1.0 - alpha;
            if t < T_MIN {
                break;
            }
        }
        for k in 0..3 {
            rgb[k] += self.background[k] * t;
        }
        PixelOut { rgb, transmittance: t, depth }
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let (x0, y0) = (tx * TILE, ty * TILE);
        let (x1, y1) = ((x0 + TILE).min(self.width), (y0 + TILE).min(self.height));
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }

    /// Tiled, tile-parallel forward pass. Returns row-major pixels.
    pub fn render_tiled(&self) -> Vec<PixelOut> {
        let per_tile: Vec<Vec<((usize, usize), PixelOut)>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                self.tile_pixels(tile)
                    .map(|(x, y)| ((x, y), self.pixel(x, y, &self.tiles[tile], None)))
                    .collect()
            })
            .collect();
        let mut out: Vec<Option<PixelOut>> = (0..self.width * self.height).map(|_| None).collect();
        for ((x, y), p) in per_tile.into_iter().flatten() {
            out[y * self.width + x] = Some(p);
        }
        out.into_iter().map(|p| p.expect("every pixel belongs to a tile")).collect()
    }

    /// Reference path: every pixel walks the full sorted list.
    pub fn render_naive(&self) -> Vec<PixelOut> {
        let all: Vec<u32> = (0..self.splats.len() as u32).collect();
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.pixel(x, y, &all, None));
            }
        }
        out
    }

    /// Screen-space gradients of every sorted splat given `d loss / d color`
    /// per pixel (`[H*W*3]`). Tiles run in parallel; their partial sums are
    /// reduced in tile order.
    pub fn backward(&self, d_color: &[f64]) -> Vec<SplatGrad> {
        let partial: Vec<Vec<(u32, SplatGrad)>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let list = &self.tiles[tile];
                let mut local = vec![SplatGrad::default(); list.len()];
                let slot_of = |pos: u32| list.binary_search(&pos).expect("hit comes from tile list");
                let mut hits = Vec::new();
                for (x, y) in self.tile_pixels(tile) {
                    let g = &d_color[(y * self.width + x) * 3..(y * self.width + x) * 3 + 3];
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    hits.clear();
                    let out = self.pixel(x, y, list, Some(&mut hits));
                    // colour of everything behind the current splat, back to front
                    let mut behind = self.background;
                    let mut t_after = out.transmittance;
                    for hit in hits.iter().rev() {
                        let s = &self.splats[hit.pos as usize].splat;
                        let grad = &mut local[slot_of(hit.pos)];
                        let t_here = t_after / (1.0 - hit.alpha);
                        let mut d_alpha = 0.0;
                        for k in 0..3 {
                            grad.rgb[k] += hit.weight * g[k];
                            d_alpha += t_here * (s.rgb[k] - behind[k]) * g[k];
                        }
                        for k in 0..3 {
                            behind[k] = hit.alpha * s.rgb[k] + (1.0 - hit.alpha) * behind[k];
                        }
                        t_after = t_here;
                        if hit.clamped {
                            continue;
                        }
                        let gauss = hit.alpha / s.opacity;
                        grad.opacity += d_alpha * gauss;
                        // alpha = o * exp(-maha / 2)
                        let d_maha = -0.5 * hit.alpha * d_alpha;
                        let [a, b, c] = s.conic;
                        let (dx, dy) = (hit.dx, hit.dy);
                        grad.conic[0] += d_maha * dx * dx;
                        grad.conic[1] += d_maha * 2.0 * dx * dy;
                        grad.conic[2] += d_maha * dy * dy;
                        // d maha / d mean = -d maha / d delta
                        grad.mean2d[0] -= d_maha * 2.0 * (a * dx + b * dy);
                        grad.mean2d[1] -= d_maha * 2.0 * (b * dx + c * dy);
                    }
                }
                list.iter().copied().zip(local).collect()
            })
            .collect();
        let mut total = vec![SplatGrad::default(); self.splats.len()];
        for tile in partial {
            for (pos, g) in tile {
                total[pos as usize].add(&g);
            }
        }
        total
    }
}
