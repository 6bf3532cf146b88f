//! The optimizable Gaussian scene, pinhole cameras, render buffers and the
//! binary checkpoint format.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::grid::{ScalarMap, VectorMap};

/// Lower/upper bounds on the activated per-axis scale, in meters.
pub const MIN_SCALE: f64 = 1e-7;
pub const MAX_SCALE: f64 = 1e3;

const QUAT_UNIT_TOL: f64 = 1e-6;
const CHECKPOINT_MAGIC: &[u8; 8] = b"DNSPLAT1";
const FLOATS_PER_GAUSSIAN: usize = 14;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic 3D Gaussian. Scale and opacity are stored in log and
/// logit space; `quat` is `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: [f64; 3],
    pub quat: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl Gaussian {
    pub fn scales(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn max_scale(&self) -> f64 {
        self.scales().into_iter().fold(f64::MIN, f64::max)
    }

    /// Index of the smallest scale axis; ties go to the lowest index.
    pub fn min_axis(&self) -> usize {
        argmin3(&self.log_scale)
    }
}

/// Lowest-index argmin of a 3-vector.
#[inline]
pub fn argmin3(v: &[f64; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if v[k] < v[best] {
            best = k;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub background: [f64; 3],
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>, background: [f64; 3]) -> Self {
        Self {
            gaussians,
            background,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// A single invariant violation found by [`validate_scene`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    /// `None` for scene-level problems (e.g. the background color).
    pub index: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} at index {i}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reports every invariant violation in the scene. Never fails and never
/// mutates.
pub fn validate_scene(scene: &GaussianScene) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |index: Option<usize>, field: &'static str, message: String| {
        violations.push(Violation {
            index,
            field,
            message,
        })
    };

    if !scene.background.iter().all(|v| v.is_finite()) {
        push(None, "background", "non-finite background".into());
    }
    for (i, g) in scene.gaussians.iter().enumerate() {
        let idx = Some(i);
        if !g.mean.iter().all(|v| v.is_finite()) {
            push(idx, "mean", "non-finite mean".into());
        }
        if !g.quat.iter().all(|v| v.is_finite()) {
            push(idx, "quat", "non-finite quat".into());
        } else {
            let norm = g.quat.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > QUAT_UNIT_TOL {
                push(idx, "quat", "quat not unit".into());
            }
        }
        if !g.log_scale.iter().all(|v| v.is_finite()) {
            push(idx, "log_scale", "non-finite log_scale".into());
        } else if g
            .scales()
            .iter()
            .any(|&s| !(s > MIN_SCALE && s < MAX_SCALE))
        {
            push(idx, "log_scale", "scale out of range".into());
        }
        if !g.opacity_logit.is_finite() {
            push(idx, "opacity_logit", "non-finite opacity_logit".into());
        }
        if !g.color.iter().all(|v| v.is_finite()) {
            push(idx, "color", "non-finite color".into());
        }
    }
    ValidationReport { violations }
}

/// Axis-aligned box around all means, each padded by `k_sigma` times that
/// Gaussian's largest scale.
pub fn scene_aabb(scene: &GaussianScene, k_sigma: f64) -> Result<([f64; 3], [f64; 3])> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    if !(k_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "k_sigma must be non-negative, got {k_sigma}"
        )));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for g in &scene.gaussians {
        let pad = k_sigma * g.max_scale();
        for a in 0..3 {
            lo[a] = lo[a].min(g.mean[a] - pad);
            hi[a] = hi[a].max(g.mean[a] + pad);
        }
    }
    Ok((lo, hi))
}

/// Pinhole camera. Camera space looks along +z with +x right and +y down.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub cam_to_world: Matrix4<f64>,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        cam_to_world: Matrix4<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            cam_to_world,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`. `up` is a world direction that
    /// ends up pointing towards the top of the image.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        intrinsics: [f64; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up));
        if right.norm() < 1e-9 {
            return Err(Error::InvalidArgument(
                "look_at: up vector parallel to viewing direction".into(),
            ));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_columns(&[right, down, forward]);
        let [fx, fy, cx, cy] = intrinsics;
        Self::new(fx, fy, cx, cy, width, height, rigid(&rot, &eye))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        if !self.cam_to_world.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite camera pose".into()));
        }
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(
                "camera rotation is not a proper rotation".into(),
            ));
        }
        Ok(())
    }

    /// Camera-to-world rotation block.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.cam_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn position(&self) -> Vector3<f64> {
        self.cam_to_world.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn world_to_cam_rotation(&self) -> Matrix3<f64> {
        self.rotation().transpose()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_cam_rotation() * (p - self.position())
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.position()
    }

    /// Pixel coordinates of a camera-space point (no visibility test).
    pub fn project(&self, p_cam: &Vector3<f64>) -> [f64; 2] {
        [
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ]
    }
}

/// 4×4 rigid transform from a rotation and translation.
pub fn rigid(rot: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Per-pixel output of one render.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderBuffers {
    pub color: VectorMap,
    /// View-space z, normalized by accumulated alpha; 0 where alpha is
    /// below the rasterizer's epsilon.
    pub depth: ScalarMap,
    /// Composited camera-space normals; not renormalized.
    pub normal: VectorMap,
    pub alpha: ScalarMap,
}

impl RenderBuffers {
    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    /// Unit-length copy of the normal buffer for display; zero vectors stay
    /// zero.
    pub fn normalized_normals(&self) -> VectorMap {
        self.normal.map(|n| normalize_or_zero(*n))
    }
}

pub(crate) fn normalize_or_zero(n: [f64; 3]) -> [f64; 3] {
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if len > 1e-12 {
        [n[0] / len, n[1] / len, n[2] / len]
    } else {
        [0.0; 3]
    }
}

/// Writes the binary checkpoint: magic, little-endian u64 count, then 14
/// little-endian f32 per Gaussian (mean, quat, log_scale, opacity_logit,
/// color). The background color is not stored.
pub fn write_checkpoint<W: Write>(scene: &GaussianScene, mut out: W) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(scene.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(scene.len() * FLOATS_PER_GAUSSIAN * 4);
    for g in &scene.gaussians {
        let fields = g
            .mean
            .iter()
            .chain(&g.quat)
            .chain(&g.log_scale)
            .chain(std::iter::once(&g.opacity_logit))
            .chain(&g.color);
        for &v in fields {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<GaussianScene> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<checkpoint stream>", e))?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::parse(0, "missing DNSPLAT1 magic"));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    let expected = count
        .checked_mul(FLOATS_PER_GAUSSIAN * 4)
        .ok_or_else(|| Error::parse(8, "gaussian count overflows"))?;
    if body.len() != expected {
        return Err(Error::parse(
            16 + body.len().min(expected),
            format!(
                "expected {expected} bytes of gaussian data, found {}",
                body.len()
            ),
        ));
    }
    let floats: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let gaussians = floats
        .chunks_exact(FLOATS_PER_GAUSSIAN)
        .map(|f| Gaussian {
            mean: [f[0], f[1], f[2]],
            quat: [f[3], f[4], f[5], f[6]],
            log_scale: [f[7], f[8], f[9]],
            opacity_logit: f[10],
            color: [f[11], f[12], f[13]],
        })
        .collect();
    Ok(GaussianScene::new(gaussians, [0.0; 3]))
}

pub fn save_checkpoint(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(scene, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
