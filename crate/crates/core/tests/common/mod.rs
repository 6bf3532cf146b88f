//! Shared fixtures and finite-difference helpers for the integration tests.
#![allow(dead_code)]

use dnsplat::geometry::normalize_quat;
use dnsplat::scene::{Camera, Gaussian, GaussianScene};
use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

/// Number of raw scalar parameters per Gaussian.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

pub fn get_param(g: &Gaussian, k: usize) -> f64 {
    match k {
        0..=2 => g.mean[k],
        3..=6 => g.quat[k - 3],
        7..=9 => g.log_scale[k - 7],
        10 => g.opacity_logit,
        _ => g.color[k - 11],
    }
}

pub fn param_mut(g: &mut Gaussian, k: usize) -> &mut f64 {
    match k {
        0..=2 => &mut g.mean[k],
        3..=6 => &mut g.quat[k - 3],
        7..=9 => &mut g.log_scale[k - 7],
        10 => &mut g.opacity_logit,
        _ => &mut g.color[k - 11],
    }
}

pub const PARAM_NAMES: [&str; PARAMS_PER_GAUSSIAN] = [
    "mean.x", "mean.y", "mean.z", "quat.w", "quat.x", "quat.y", "quat.z", "log_scale.0",
    "log_scale.1", "log_scale.2", "opacity_logit", "color.r", "color.g", "color.b",
];

/// Central difference of `f` w.r.t. parameter `k` of Gaussian `i`.
pub fn central_difference(
    scene: &GaussianScene,
    i: usize,
    k: usize,
    h: f64,
    mut f: impl FnMut(&GaussianScene) -> f64,
) -> f64 {
    let mut plus = scene.clone();
    *param_mut(&mut plus.gaussians[i], k) += h;
    let mut minus = scene.clone();
    *param_mut(&mut minus.gaussians[i], k) -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

pub fn fd_matches(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs || diff <= rel * analytic.abs().max(numeric.abs())
}

/// Identity-pose 16×16 camera looking down +z.
pub fn small_camera(size: usize) -> Camera {
    let c = (size as f64 - 1.0) / 2.0;
    Camera::new(
        size as f64,
        size as f64,
        c,
        c,
        size,
        size,
        Matrix4::identity(),
    )
    .unwrap()
}

/// A random scene of `n` Gaussians in front of [`small_camera`], with a
/// clear gap between the smallest and the other scales so the minor axis
/// is unambiguous.
pub fn random_scene(seed: u64, n: usize) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|_| {
            let z: f64 = rng.gen_range(1.5..3.0);
            let quat = normalize_quat(&[
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ])
            .unwrap();
            let big: f64 = rng.gen_range(0.08..0.2);
            let mut log_scale = [
                (big * rng.gen_range(0.6..1.0)).ln(),
                (big * rng.gen_range(0.6..1.0)).ln(),
                (big * rng.gen_range(0.6..1.0)).ln(),
            ];
            log_scale[rng.gen_range(0..3)] = (big * rng.gen_range(0.1..0.3)).ln();
            Gaussian {
                mean: [
                    rng.gen_range(-0.35..0.35) * z,
                    rng.gen_range(-0.35..0.35) * z,
                    z,
                ],
                quat,
                log_scale,
                opacity_logit: rng.gen_range(-1.5..1.5),
                color: [
                    rng.gen_range(0.05..0.95),
                    rng.gen_range(0.05..0.95),
                    rng.gen_range(0.05..0.95),
                ],
            }
        })
        .collect();
    GaussianScene::new(gaussians, [0.1, 0.2, 0.3])
}
