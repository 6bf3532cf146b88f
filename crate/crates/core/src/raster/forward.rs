use rayon::prelude::*;

use super::project::{project, Projection};
use super::{RenderOptions, ALPHA_EPS};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scene::{Camera, Gaussian, GaussianScene, RenderBuffers};

const TILE: usize = 16;

/// All splats of one view, sorted by z, with per-tile candidate lists.
pub(crate) struct Frame {
    pub splats: Vec<Projection>,
    tiles_x: usize,
    /// Sorted-splat indices per tile, in ascending z.
    tiles: Vec<Vec<u32>>,
}

fn tie_key(g: &Gaussian) -> impl Iterator<Item = f64> + '_ {
    g.mean
        .iter()
        .chain(&g.quat)
        .chain(&g.log_scale)
        .chain(std::iter::once(&g.opacity_logit))
        .chain(&g.color)
        .copied()
}

impl Frame {
    pub fn build(scene: &GaussianScene, cam: &Camera, opts: &RenderOptions) -> Result<Self> {
        cam.validate()?;
        let w2c = cam.world_to_cam_rotation();
        let projected: Vec<Option<Projection>> = scene
            .gaussians
            .par_iter()
            .enumerate()
            .map(|(i, g)| project(g, i, cam, &w2c, opts))
            .collect::<Result<_>>()?;
        let mut splats: Vec<Projection> = projected.into_iter().flatten().collect();
        // Global sort. Exact z ties fall back to the Gaussians' own
        // parameters so the order never depends on scene order.
        splats.sort_by(|a, b| {
            a.splat.z.total_cmp(&b.splat.z).then_with(|| {
                tie_key(&scene.gaussians[a.splat.source_index])
                    .zip(tie_key(&scene.gaussians[b.splat.source_index]))
                    .map(|(x, y)| x.total_cmp(&y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });

        let tiles_x = cam.width.div_ceil(TILE);
        let tiles_y = cam.height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (s, p) in splats.iter().enumerate() {
            let [x0, x1, y0, y1] = p.rect;
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    tiles[ty * tiles_x + tx].push(s as u32);
                }
            }
        }
        Ok(Self {
            splats,
            tiles_x,
            tiles,
        })
    }

    /// Front-to-back compositing at pixel `(px, py)`. `visit` sees every
    /// contributing splat as `(sorted index, alpha, gaussian falloff,
    /// alpha clamped?, transmittance before it)`. Returns the final
    /// transmittance.
    #[inline]
    pub fn composite(
        &self,
        px: usize,
        py: usize,
        opts: &RenderOptions,
        mut visit: impl FnMut(usize, f64, f64, bool, f64),
    ) -> f64 {
        let mut t = 1.0;
        let tile = &self.tiles[(py / TILE) * self.tiles_x + px / TILE];
        let (fx, fy) = (px as f64, py as f64);
        for &s in tile {
            let p = &self.splats[s as usize];
            let [x0, x1, y0, y1] = p.rect;
            if px < x0 || px > x1 || py < y0 || py > y1 {
                continue;
            }
            let sp = &p.splat;
            let dx = sp.mean2d[0] - fx;
            let dy = sp.mean2d[1] - fy;
            let [a, b, c] = sp.conic;
            let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
            let falloff = power.exp();
            let mut alpha = sp.opacity * falloff;
            let mut clamped = false;
            if let Some(max) = opts.alpha_clamp {
                if alpha > max {
                    alpha = max;
                    clamped = true;
                }
            }
            if alpha < opts.min_alpha {
                continue;
            }
            let next_t = t * (1.0 - alpha);
            if next_t < opts.min_transmittance {
                break;
            }
            visit(s as usize, alpha, falloff, clamped, t);
            t = next_t;
        }
        t
    }
}

/// Renders with [`RenderOptions::default`].
pub fn render(scene: &GaussianScene, cam: &Camera) -> Result<RenderBuffers> {
    render_with(scene, cam, &RenderOptions::default())
}

pub fn render_with(
    scene: &GaussianScene,
    cam: &Camera,
    opts: &RenderOptions,
) -> Result<RenderBuffers> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let frame = Frame::build(scene, cam, opts)?;
    let bg = scene.background;
    let (w, h) = (cam.width, cam.height);

    let rows: Vec<Vec<([f64; 3], f64, [f64; 3], f64)>> = (0..h)
        .into_par_iter()
        .map(|py| {
            (0..w)
                .map(|px| {
                    let mut color = [0.0; 3];
                    let mut raw_depth = 0.0;
                    let mut normal = [0.0; 3];
                    let mut acc = 0.0;
                    let t_final = frame.composite(px, py, opts, |s, alpha, _, _, t| {
                        let sp = &frame.splats[s].splat;
                        let wgt = alpha * t;
                        for ch in 0..3 {
                            color[ch] += sp.color[ch] * wgt;
                            normal[ch] += sp.cam_normal[ch] * wgt;
                        }
                        raw_depth += sp.z * wgt;
                        acc += wgt;
                    });
                    for ch in 0..3 {
                        color[ch] += t_final * bg[ch];
                    }
                    let depth = if acc > ALPHA_EPS { raw_depth / acc } else { 0.0 };
                    (color, depth, normal, acc)
                })
                .collect()
        })
        .collect();

    let mut color = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut normal = Vec::with_capacity(w * h);
    let mut alpha = Vec::with_capacity(w * h);
    for (c, d, n, a) in rows.into_iter().flatten() {
        color.push(c);
        depth.push(d);
        normal.push(n);
        alpha.push(a);
    }
    Ok(RenderBuffers {
        color: Grid::from_vec(w, h, color)?,
        depth: Grid::from_vec(w, h, depth)?,
        normal: Grid::from_vec(w, h, normal)?,
        alpha: Grid::from_vec(w, h, alpha)?,
    })
}
