//! Quaternion algebra, Gaussian normals, depth back-projection, point-cloud
//! normal estimation and depth-based scene initialization.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::TrainFrame;
use crate::error::{Error, Result};
use crate::grid::{ScalarMap, VectorMap};
use crate::kdtree::{KdTree, Norm};
use crate::scene::{argmin3, logit, Camera, Gaussian, GaussianScene, MAX_SCALE, MIN_SCALE};

/// Initial opacity of depth-initialized Gaussians.
pub const INIT_OPACITY: f64 = 0.1;
/// Ratio between the tangent scales and the normal-axis scale at init.
pub const INIT_FLATTENING: f64 = 10.0;
const INIT_NORMAL_NEIGHBORS: usize = 16;

/// Points with unit normals and optional colors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OrientedPointCloud {
    pub positions: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
}

impl OrientedPointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if self.normals.len() != self.positions.len() {
            return Err(Error::shape(
                format!("{} normals", self.positions.len()),
                format!("{} normals", self.normals.len()),
            ));
        }
        if let Some(colors) = &self.colors {
            if colors.len() != self.positions.len() {
                return Err(Error::shape(
                    format!("{} colors", self.positions.len()),
                    format!("{} colors", colors.len()),
                ));
            }
        }
        for (i, (p, n)) in self.positions.iter().zip(&self.normals).enumerate() {
            if !p.iter().chain(n).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("point {i}")));
            }
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (len - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidArgument(format!(
                    "normal {i} has length {len}"
                )));
            }
        }
        Ok(())
    }

    /// Keeps the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`; no normalization.
pub fn rot_from_unit_quat(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn normalize_quat(q: &[f64; 4]) -> Result<[f64; 4]> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= 1e-8) {
        return Err(Error::ZeroQuaternion { norm });
    }
    Ok(q.map(|v| v / norm))
}

/// Rotation matrix of `q`, normalized first.
pub fn quat_to_rot(q: &[f64; 4]) -> Result<Matrix3<f64>> {
    Ok(rot_from_unit_quat(&normalize_quat(q)?))
}

/// Vector-Jacobian product of [`rot_from_unit_quat`]: maps `dL/dR` to
/// `dL/dq` for the (already unit) quaternion `q`.
pub fn rot_from_unit_quat_vjp(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)]
            + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [gw, gx, gy, gz]
}

/// Pulls a gradient w.r.t. `q / |q|` back to the raw quaternion `q`.
pub fn normalize_quat_vjp(q: &[f64; 4], g_unit: &[f64; 4]) -> [f64; 4] {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u = q.map(|v| v / norm);
    let dot: f64 = u.iter().zip(g_unit).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|i| (g_unit[i] - u[i] * dot) / norm)
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Minimal rotation taking +z onto the unit vector `n`. The antipodal case
/// uses a half turn about x.
pub fn quat_from_z_to(n: &[f64; 3]) -> [f64; 4] {
    let w = 1.0 + n[2];
    if w < 1e-9 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let q = [w, -n[1], n[0], 0.0];
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / norm)
}

/// Unit normal of a Gaussian: the rotation column of its smallest scale
/// axis (ties go to the lowest index).
pub fn gaussian_normal(q: &[f64; 4], scales: &[f64; 3]) -> Result<[f64; 3]> {
    let r = quat_to_rot(q)?;
    let k = argmin3(scales);
    Ok([r[(0, k)], r[(1, k)], r[(2, k)]])
}

/// Returns `n` if it faces the camera (`n · (cam_pos − mean) ≥ 0`), else `−n`.
pub fn orient_normal(n: &[f64; 3], mean: &[f64; 3], cam_pos: &[f64; 3]) -> [f64; 3] {
    let dot = (0..3).map(|a| n[a] * (cam_pos[a] - mean[a])).sum::<f64>();
    if dot >= 0.0 {
        *n
    } else {
        n.map(|v| -v)
    }
}

/// Turns a Gaussian's normal around by a half turn about one of its other
/// local axes, so the shape is unchanged and the minor axis flips sign.
pub fn flip_gaussian_normal(g: &mut Gaussian) {
    let k = g.min_axis();
    let j = (k + 1) % 3;
    let mut e = [0.0; 4];
    e[j + 1] = 1.0;
    g.quat = quat_mul(&g.quat, &e);
}

/// Points and pixel bookkeeping from [`backproject_pixels`].
pub(crate) struct Backprojected {
    pub cloud: OrientedPointCloud,
    /// Row-major pixel index of each point.
    pub pixels: Vec<usize>,
}

pub(crate) fn backproject_pixels(
    depth: &ScalarMap,
    cam: &Camera,
    stride: usize,
    normal_map: Option<&VectorMap>,
) -> Result<Backprojected> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    depth.ensure_dims(cam.width, cam.height)?;
    if let Some(nm) = normal_map {
        nm.ensure_dims(cam.width, cam.height)?;
    }
    let rot = cam.rotation();
    let origin = cam.position();
    let mut cloud = OrientedPointCloud::default();
    let mut pixels = Vec::new();
    for v in (0..cam.height).step_by(stride) {
        for u in (0..cam.width).step_by(stride) {
            let d = depth[(u, v)];
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let p_cam = Vector3::new(
                (u as f64 - cam.cx) * d / cam.fx,
                (v as f64 - cam.cy) * d / cam.fy,
                d,
            );
            let p = rot * p_cam + origin;
            let n = match normal_map {
                Some(nm) => {
                    let n_cam = Vector3::from(nm[(u, v)]);
                    let len = n_cam.norm();
                    if !(len > 1e-6) {
                        continue;
                    }
                    rot * (n_cam / len)
                }
                // Without a normal map, point back along the viewing ray.
                None => (origin - p).normalize(),
            };
            cloud.positions.push([p.x, p.y, p.z]);
            cloud.normals.push([n.x, n.y, n.z]);
            pixels.push(v * cam.width + u);
        }
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(Backprojected { cloud, pixels })
}

/// Back-projects every `stride`-th pixel with positive depth into world
/// space. With a camera-space `normal_map`, normals are rotated to world and
/// normalized (pixels with near-zero normals are skipped); otherwise each
/// point's normal points back towards the camera.
pub fn backproject(
    depth: &ScalarMap,
    cam: &Camera,
    stride: usize,
    normal_map: Option<&VectorMap>,
) -> Result<OrientedPointCloud> {
    backproject_pixels(depth, cam, stride, normal_map).map(|b| b.cloud)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalEstimate {
    pub normals: Vec<[f64; 3]>,
    /// Set where the neighbourhood covariance had rank < 2; such points get
    /// the normal (0, 0, 1) before orientation.
    pub degenerate: Vec<bool>,
}

/// PCA normals from the `k` nearest neighbours (the point itself included).
/// Each normal is oriented towards `viewpoints[i]` when given, otherwise
/// away from the cloud centroid.
pub fn estimate_normals(
    points: &[[f64; 3]],
    k: usize,
    viewpoints: Option<&[[f64; 3]]>,
) -> Result<NormalEstimate> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if k < 3 || points.len() <= k {
        return Err(Error::InvalidArgument(format!(
            "need N > k >= 3, got N = {}, k = {k}",
            points.len()
        )));
    }
    if let Some(vp) = viewpoints {
        if vp.len() != points.len() {
            return Err(Error::shape(
                format!("{} viewpoints", points.len()),
                format!("{} viewpoints", vp.len()),
            ));
        }
    }
    let tree = KdTree::new(points, Norm::L2);
    let n = points.len() as f64;
    let centroid = points.iter().fold([0.0; 3], |acc, p| {
        [acc[0] + p[0] / n, acc[1] + p[1] / n, acc[2] + p[2] / n]
    });

    let mut normals = Vec::with_capacity(points.len());
    let mut degenerate = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let nbrs = tree.k_nearest(p, k);
        let (normal, flag) = pca_normal(nbrs.iter().map(|nb| &points[nb.index]));
        let toward = match viewpoints {
            Some(vp) => vp[i],
            // Orienting away from the centroid means facing a virtual
            // viewpoint placed beyond the point.
            None => [2.0 * p[0] - centroid[0], 2.0 * p[1] - centroid[1], 2.0 * p[2] - centroid[2]],
        };
        normals.push(orient_normal(&normal, p, &toward));
        degenerate.push(flag);
    }
    Ok(NormalEstimate {
        normals,
        degenerate,
    })
}

fn pca_normal<'a>(pts: impl Iterator<Item = &'a [f64; 3]> + Clone) -> ([f64; 3], bool) {
    let count = pts.clone().count() as f64;
    let mean = pts.clone().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / count;
    let cov = pts.fold(Matrix3::zeros(), |acc, p| {
        let d = Vector3::from(*p) - mean;
        acc + d * d.transpose()
    }) / count;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]];
    let middle = eig.eigenvalues[order[1]];
    if !(largest > 0.0) || middle <= 1e-12 * largest {
        return ([0.0, 0.0, 1.0], true);
    }
    let v = eig.eigenvectors.column(order[0]).normalize();
    ([v.x, v.y, v.z], false)
}

/// Dense initialization from per-frame depth: back-project, subsample to
/// `target_count` (never upsampling), and orient each Gaussian's thin axis
/// along the estimated surface normal.
pub fn init_scene_from_depths(
    frames: &[TrainFrame],
    target_count: usize,
    seed: u64,
) -> Result<GaussianScene> {
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut viewpoints = Vec::new();
    for frame in frames {
        let Some(depth) = frame.depth_target() else {
            continue;
        };
        let Ok(bp) = backproject_pixels(&depth, &frame.camera, 1, None) else {
            continue;
        };
        let eye = frame.camera.position();
        let image = frame.image.as_slice();
        for (p, &pix) in bp.cloud.positions.iter().zip(&bp.pixels) {
            positions.push(*p);
            colors.push(image[pix]);
            viewpoints.push([eye.x, eye.y, eye.z]);
        }
    }
    if positions.is_empty() || target_count == 0 {
        return Err(Error::EmptyCloud);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = subsample_indices(&mut rng, positions.len(), target_count);
    let positions: Vec<[f64; 3]> = keep.iter().map(|&i| positions[i]).collect();
    let colors: Vec<[f64; 3]> = keep.iter().map(|&i| colors[i]).collect();
    let viewpoints: Vec<[f64; 3]> = keep.iter().map(|&i| viewpoints[i]).collect();

    let count = positions.len();
    let normals = if count > 3 {
        let k = INIT_NORMAL_NEIGHBORS.min(count - 1);
        estimate_normals(&positions, k, Some(&viewpoints))?.normals
    } else {
        positions
            .iter()
            .zip(&viewpoints)
            .map(|(p, v)| {
                let d = Vector3::from(*v) - Vector3::from(*p);
                let d = if d.norm() > 0.0 { d.normalize() } else { Vector3::z() };
                [d.x, d.y, d.z]
            })
            .collect()
    };

    let tree = KdTree::new(&positions, Norm::L2);
    let opacity_logit = logit(INIT_OPACITY);
    let gaussians = (0..count)
        .map(|i| {
            let spacing = if count > 1 {
                let nbrs = tree.k_nearest(&positions[i], 4.min(count));
                let others: Vec<f64> = nbrs
                    .iter()
                    .filter(|nb| nb.index != i)
                    .take(3)
                    .map(|nb| nb.distance)
                    .collect();
                others.iter().sum::<f64>() / others.len() as f64
            } else {
                0.01
            };
            let tangent = spacing.clamp(MIN_SCALE * 1e3, MAX_SCALE * 1e-3).ln();
            Gaussian {
                mean: positions[i],
                quat: quat_from_z_to(&normals[i]),
                log_scale: [tangent, tangent, tangent - INIT_FLATTENING.ln()],
                opacity_logit,
                color: colors[i].map(|c| c.clamp(0.0, 1.0)),
            }
        })
        .collect();
    Ok(GaussianScene::new(gaussians, [0.0; 3]))
}

/// Sorted uniform sample of `min(want, n)` distinct indices from `0..n`.
pub(crate) fn subsample_indices(rng: &mut ChaCha8Rng, n: usize, want: usize) -> Vec<usize> {
    if want >= n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(rng, n, want).into_vec();
    idx.sort_unstable();
    idx
}
