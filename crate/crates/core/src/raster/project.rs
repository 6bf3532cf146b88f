use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::{RenderOptions, NEAR_PLANE};
use crate::error::{Error, Result};
use crate::geometry::{normalize_quat, rot_from_unit_quat};
use crate::scene::{argmin3, sigmoid, Camera, Gaussian};

/// A Gaussian projected to screen space.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    /// Pixel coordinates; pixel `(u, v)` sits at exactly `(u, v)`.
    pub mean2d: [f64; 2],
    /// Upper triangle `(a, b, c)` of the inverse 2D covariance.
    pub conic: [f64; 3],
    /// Footprint radius in pixels (`cutoff_sigma` standard deviations).
    pub radius: f64,
    /// View-space z (meters).
    pub z: f64,
    /// Camera-space normal, flipped to face the camera.
    pub cam_normal: [f64; 3],
    /// Color clamped to [0, 1].
    pub color: [f64; 3],
    pub opacity: f64,
    pub source_index: usize,
}

/// Everything the backward pass needs to differentiate one projection.
#[derive(Clone, Debug)]
pub(crate) struct Projection {
    pub splat: Splat2D,
    pub unit_quat: [f64; 4],
    pub rot: Matrix3<f64>,
    pub scales: [f64; 3],
    pub p_cam: Vector3<f64>,
    /// View-space x and y as seen by the Jacobian, with their derivatives
    /// `(d/dx, d/dz)` and `(d/dy, d/dz)`.
    pub t_jac: [f64; 2],
    pub dt_jac: [[f64; 2]; 2],
    /// `jac · world_to_cam`.
    pub m: Matrix2x3<f64>,
    pub cov3: Matrix3<f64>,
    pub conic_mat: Matrix2<f64>,
    pub minor_axis: usize,
    pub normal_sign: f64,
    /// Inclusive pixel rectangle `[x0, x1] × [y0, y1]` the splat may touch.
    pub rect: [usize; 4],
}

/// Projects `g` with a 3σ footprint. `Ok(None)` if the Gaussian is behind
/// the near plane or its footprint misses the image.
pub fn project_gaussian(g: &Gaussian, cam: &Camera, lowpass: f64) -> Result<Option<Splat2D>> {
    let opts = RenderOptions {
        lowpass,
        ..RenderOptions::default()
    };
    let w2c = cam.world_to_cam_rotation();
    Ok(project(g, 0, cam, &w2c, &opts)?.map(|p| p.splat))
}

pub(crate) fn project(
    g: &Gaussian,
    source_index: usize,
    cam: &Camera,
    w2c: &Matrix3<f64>,
    opts: &RenderOptions,
) -> Result<Option<Projection>> {
    let p_cam = w2c * (Vector3::from(g.mean) - cam.position());
    if !(p_cam.z > NEAR_PLANE) {
        return Ok(None);
    }
    let unit_quat = normalize_quat(&g.quat)?;
    let rot = rot_from_unit_quat(&unit_quat);
    let scales = g.scales();
    let s2 = Matrix3::from_diagonal(&Vector3::from(scales.map(|s| s * s)));
    let cov3 = rot * s2 * rot.transpose();

    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let guard = |v: f64, half_fov: f64| -> (f64, [f64; 2]) {
        match opts.jacobian_guard {
            Some(k) if (v / z).abs() > k * half_fov => {
                let lim = (v / z).signum() * k * half_fov;
                (lim * z, [0.0, lim])
            }
            _ => (v, [1.0, 0.0]),
        }
    };
    let (tx, dtx) = guard(x, cam.width as f64 / (2.0 * cam.fx));
    let (ty, dty) = guard(y, cam.height as f64 / (2.0 * cam.fy));
    let jac = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * tx / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * ty / (z * z),
    );
    let m = jac * w2c;
    let cov2 = m * cov3 * m.transpose() + Matrix2::identity() * opts.lowpass;
    let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
    if !(det > 0.0) {
        return Err(Error::DegenerateCovariance { det });
    }
    let conic_mat = Matrix2::new(
        cov2[(1, 1)] / det,
        -cov2[(0, 1)] / det,
        -cov2[(1, 0)] / det,
        cov2[(0, 0)] / det,
    );
    let mean2d = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];

    let mid = 0.5 * (cov2[(0, 0)] + cov2[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let (radius, rect) = match opts.cutoff_sigma {
        Some(k) => {
            let r = (k * lambda_max.sqrt()).ceil();
            let (w, h) = (cam.width as f64, cam.height as f64);
            if mean2d[0] + r < 0.0
                || mean2d[0] - r > w - 1.0
                || mean2d[1] + r < 0.0
                || mean2d[1] - r > h - 1.0
            {
                return Ok(None);
            }
            let clamp = |v: f64, hi: f64| v.max(0.0).min(hi) as usize;
            (
                r,
                [
                    clamp((mean2d[0] - r).floor(), w - 1.0),
                    clamp((mean2d[0] + r).ceil(), w - 1.0),
                    clamp((mean2d[1] - r).floor(), h - 1.0),
                    clamp((mean2d[1] + r).ceil(), h - 1.0),
                ],
            )
        }
        None => (
            f64::INFINITY,
            [0, cam.width - 1, 0, cam.height - 1],
        ),
    };

    let minor_axis = argmin3(&g.log_scale);
    let n_world = rot.column(minor_axis).into_owned();
    let n_cam = w2c * n_world;
    // Face the camera: the normal must point against the view vector p_cam.
    let normal_sign = if n_cam.dot(&p_cam) > 0.0 { -1.0 } else { 1.0 };
    let cam_normal = [
        normal_sign * n_cam.x,
        normal_sign * n_cam.y,
        normal_sign * n_cam.z,
    ];

    let splat = Splat2D {
        mean2d,
        conic: [conic_mat[(0, 0)], conic_mat[(0, 1)], conic_mat[(1, 1)]],
        radius,
        z,
        cam_normal,
        color: g.color.map(|c| c.clamp(0.0, 1.0)),
        opacity: sigmoid(g.opacity_logit),
        source_index,
    };
    Ok(Some(Projection {
        splat,
        unit_quat,
        rot,
        scales,
        p_cam,
        t_jac: [tx, ty],
        dt_jac: [dtx, dty],
        m,
        cov3,
        conic_mat,
        minor_axis,
        normal_sign,
        rect,
    }))
}
