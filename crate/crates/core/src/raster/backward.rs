use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use super::forward::Frame;
use super::{RenderOptions, ALPHA_EPS};
use crate::error::{Error, Result};
use crate::geometry::{normalize_quat_vjp, rot_from_unit_quat_vjp};
use crate::grid::{ScalarMap, VectorMap};
use crate::scene::{Camera, GaussianScene, RenderBuffers};

/// Rows per backward work unit. Fixed so the reduction order (and thus
/// every bit of the result) does not depend on the worker count.
const ROWS_PER_CHUNK: usize = 8;

/// Per-pixel gradients of some scalar w.r.t. each render buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferGrads {
    pub color: VectorMap,
    pub depth: ScalarMap,
    pub normal: VectorMap,
    pub alpha: ScalarMap,
}

impl BufferGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: VectorMap::filled(width, height, [0.0; 3]),
            depth: ScalarMap::filled(width, height, 0.0),
            normal: VectorMap::filled(width, height, [0.0; 3]),
            alpha: ScalarMap::filled(width, height, 0.0),
        }
    }

    fn check(&self, w: usize, h: usize) -> Result<()> {
        self.color.ensure_dims(w, h)?;
        self.depth.ensure_dims(w, h)?;
        self.normal.ensure_dims(w, h)?;
        self.alpha.ensure_dims(w, h)
    }
}

/// Gradients w.r.t. every raw Gaussian parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrads {
    pub mean: Vec<[f64; 3]>,
    pub quat: Vec<[f64; 4]>,
    pub log_scale: Vec<[f64; 3]>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    /// Gradient w.r.t. the projected pixel-space mean (densification signal).
    pub mean2d: Vec<[f64; 2]>,
    /// Whether the Gaussian survived projection in this view.
    pub visible: Vec<bool>,
}

impl SceneGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            mean: vec![[0.0; 3]; n],
            quat: vec![[0.0; 4]; n],
            log_scale: vec![[0.0; 3]; n],
            opacity_logit: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            mean2d: vec![[0.0; 2]; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.mean.iter().flatten().all(|v| v.is_finite())
            && self.quat.iter().flatten().all(|v| v.is_finite())
            && self.log_scale.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logit.iter().all(|v| v.is_finite())
            && self.color.iter().flatten().all(|v| v.is_finite())
    }
}

/// Screen-space gradient accumulator for one splat.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mean2d: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    z: f64,
    normal: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for i in 0..2 {
            self.mean2d[i] += o.mean2d[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
            self.normal[i] += o.normal[i];
        }
        self.opacity += o.opacity;
        self.z += o.z;
    }
}

/// Reverse-mode gradient of `Σ_pixels ⟨upstream, buffers⟩` w.r.t. the
/// scene, for a forward pass made with [`RenderOptions::default`].
pub fn render_backward(
    scene: &GaussianScene,
    cam: &Camera,
    buffers: &RenderBuffers,
    upstream: &BufferGrads,
) -> Result<SceneGrads> {
    render_backward_with(scene, cam, buffers, upstream, &RenderOptions::default())
}

/// [`render_backward`] for an arbitrary [`RenderOptions`]; `opts` must be
/// the ones the buffers were rendered with.
pub fn render_backward_with(
    scene: &GaussianScene,
    cam: &Camera,
    buffers: &RenderBuffers,
    upstream: &BufferGrads,
    opts: &RenderOptions,
) -> Result<SceneGrads> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let (w, h) = (cam.width, cam.height);
    buffers.color.ensure_dims(w, h)?;
    buffers.depth.ensure_dims(w, h)?;
    buffers.normal.ensure_dims(w, h)?;
    buffers.alpha.ensure_dims(w, h)?;
    upstream.check(w, h)?;

    let frame = Frame::build(scene, cam, opts)?;
    let n_splats = frame.splats.len();
    let bg = scene.background;

    let chunks: Vec<Vec<SplatGrad>> = (0..h.div_ceil(ROWS_PER_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = vec![SplatGrad::default(); n_splats];
            let mut contrib: Vec<(usize, f64, f64, bool, f64)> = Vec::new();
            let y_end = ((chunk + 1) * ROWS_PER_CHUNK).min(h);
            for py in chunk * ROWS_PER_CHUNK..y_end {
                for px in 0..w {
                    contrib.clear();
                    let t_final = frame.composite(px, py, opts, |s, a, g, c, t| {
                        contrib.push((s, a, g, c, t))
                    });
                    if contrib.is_empty() {
                        continue;
                    }
                    pixel_backward(&frame, &contrib, t_final, bg, upstream, px, py, &mut acc);
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![SplatGrad::default(); n_splats];
    for chunk in &chunks {
        for (dst, src) in screen.iter_mut().zip(chunk) {
            dst.add(src);
        }
    }

    let mut grads = SceneGrads::zeros(scene.len());
    let w2c = cam.world_to_cam_rotation();
    for (proj, sg) in frame.splats.iter().zip(&screen) {
        let i = proj.splat.source_index;
        grads.visible[i] = true;
        grads.mean2d[i] = sg.mean2d;
        chain_to_params(&scene.gaussians[i], proj, sg, cam, &w2c, &mut grads, i);
    }
    Ok(grads)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn pixel_backward(
    frame: &Frame,
    contrib: &[(usize, f64, f64, bool, f64)],
    t_final: f64,
    bg: [f64; 3],
    up: &BufferGrads,
    px: usize,
    py: usize,
    acc: &mut [SplatGrad],
) {
    let g_color = *up.color.get(px, py);
    let g_depth = *up.depth.get(px, py);
    let g_normal = *up.normal.get(px, py);
    let g_alpha = *up.alpha.get(px, py);

    let mut acc_alpha = 0.0;
    let mut raw_depth = 0.0;
    for &(s, a, _, _, t) in contrib {
        acc_alpha += a * t;
        raw_depth += frame.splats[s].splat.z * a * t;
    }
    // depth = raw_depth / acc_alpha above the epsilon, constant 0 below.
    let (g_raw_depth, g_acc) = if acc_alpha > ALPHA_EPS {
        (
            g_depth / acc_alpha,
            g_alpha - g_depth * raw_depth / (acc_alpha * acc_alpha),
        )
    } else {
        (0.0, g_alpha)
    };

    // Suffix sums Σ_{j>i} f_j w_j (+ T_final·bg for color).
    let mut tail_color = [t_final * bg[0], t_final * bg[1], t_final * bg[2]];
    let mut tail_depth = 0.0;
    let mut tail_normal = [0.0; 3];
    let mut tail_acc = 0.0;
    let (fx, fy) = (px as f64, py as f64);

    for &(s, alpha, falloff, clamped, t) in contrib.iter().rev() {
        let sp = &frame.splats[s].splat;
        let wgt = alpha * t;
        let inv = 1.0 / (1.0 - alpha);
        let g = &mut acc[s];

        let mut d_alpha = 0.0;
        for ch in 0..3 {
            g.color[ch] += g_color[ch] * wgt;
            g.normal[ch] += g_normal[ch] * wgt;
            d_alpha += g_color[ch] * (sp.color[ch] * t - tail_color[ch] * inv);
            d_alpha += g_normal[ch] * (sp.cam_normal[ch] * t - tail_normal[ch] * inv);
        }
        g.z += g_raw_depth * wgt;
        d_alpha += g_raw_depth * (sp.z * t - tail_depth * inv);
        d_alpha += g_acc * (t - tail_acc * inv);

        for ch in 0..3 {
            tail_color[ch] += sp.color[ch] * wgt;
            tail_normal[ch] += sp.cam_normal[ch] * wgt;
        }
        tail_depth += sp.z * wgt;
        tail_acc += wgt;

        if clamped {
            continue;
        }
        g.opacity += d_alpha * falloff;
        let d_power = d_alpha * alpha;
        let dx = sp.mean2d[0] - fx;
        let dy = sp.mean2d[1] - fy;
        let [a, b, c] = sp.conic;
        g.mean2d[0] -= d_power * (a * dx + b * dy);
        g.mean2d[1] -= d_power * (c * dy + b * dx);
        g.conic[0] -= d_power * 0.5 * dx * dx;
        g.conic[1] -= d_power * dx * dy;
        g.conic[2] -= d_power * 0.5 * dy * dy;
    }
}

fn chain_to_params(
    gauss: &crate::scene::Gaussian,
    proj: &super::project::Projection,
    sg: &SplatGrad,
    cam: &Camera,
    w2c: &Matrix3<f64>,
    grads: &mut SceneGrads,
    i: usize,
) {
    let sp = &proj.splat;

    let o = sp.opacity;
    grads.opacity_logit[i] = sg.opacity * o * (1.0 - o);
    for ch in 0..3 {
        let c = gauss.color[ch];
        grads.color[i][ch] = if (0.0..=1.0).contains(&c) {
            sg.color[ch]
        } else {
            0.0
        };
    }

    // conic = cov2⁻¹  ⇒  dL/dcov2 = −conic · G · conic, G symmetric.
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2 = -(proj.conic_mat * g_conic * proj.conic_mat);
    // cov2 = M Σ Mᵀ + lowpass·I.
    let g_cov3: Matrix3<f64> = proj.m.transpose() * g_cov2 * proj.m;
    let g_m: Matrix2x3<f64> = 2.0 * g_cov2 * proj.m * proj.cov3;
    let g_jac: Matrix2x3<f64> = g_m * w2c.transpose();

    let (x, y, z) = (proj.p_cam.x, proj.p_cam.y, proj.p_cam.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut g_p = Vector3::zeros();
    // mean2d
    g_p.x += sg.mean2d[0] * fx / z;
    g_p.y += sg.mean2d[1] * fy / z;
    g_p.z -= sg.mean2d[0] * fx * x / z2 + sg.mean2d[1] * fy * y / z2;
    // view-space depth
    g_p.z += sg.z;
    // Jacobian entries
    let ([tx, ty], [dtx, dty]) = (proj.t_jac, proj.dt_jac);
    g_p.z -= g_jac[(0, 0)] * fx / z2;
    g_p.x -= g_jac[(0, 2)] * fx * dtx[0] / z2;
    g_p.z += g_jac[(0, 2)] * (2.0 * fx * tx / z3 - fx * dtx[1] / z2);
    g_p.z -= g_jac[(1, 1)] * fy / z2;
    g_p.y -= g_jac[(1, 2)] * fy * dty[0] / z2;
    g_p.z += g_jac[(1, 2)] * (2.0 * fy * ty / z3 - fy * dty[1] / z2);
    let g_mean = w2c.transpose() * g_p;
    grads.mean[i] = [g_mean.x, g_mean.y, g_mean.z];

    // Σ = R diag(s²) Rᵀ
    let s2 = Vector3::from(proj.scales.map(|s| s * s));
    let mut g_rot = 2.0 * g_cov3 * proj.rot * Matrix3::from_diagonal(&s2);
    let proj_grad = proj.rot.transpose() * g_cov3 * proj.rot;
    for k in 0..3 {
        grads.log_scale[i][k] = 2.0 * s2[k] * proj_grad[(k, k)];
    }
    // cam_normal = sign · W R[:, k]
    let g_n = w2c.transpose() * Vector3::from(sg.normal) * proj.normal_sign;
    for r in 0..3 {
        g_rot[(r, proj.minor_axis)] += g_n[r];
    }
    let g_unit = rot_from_unit_quat_vjp(&proj.unit_quat, &g_rot);
    grads.quat[i] = normalize_quat_vjp(&gauss.quat, &g_unit);
}
