//! On-disk dataset layout:
//!
//! ```text
//! root/
//!   transforms.json      intrinsics + camera-to-world poses
//!   images/*.png         RGB
//!   depth/*.png          16-bit sensor depth, millimeters (optional)
//!   mono_depth/*.png     16-bit monocular depth, unitless × 1000 (optional)
//!   normals/*.png        8-bit camera-space normals, n = 2v/255 − 1 (optional)
//!   sparse_depth/*.png   16-bit sparse metric depth, millimeters (optional)
//!   alignment.txt        cached mono scale/shift per frame (optional)
//! ```
//!
//! Optional maps are matched to frames by file stem. A normal pixel of
//! exactly (0, 0, 0) marks a missing normal.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, RgbImage};
use nalgebra::{Matrix3, Matrix4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::read_alignment_cache;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarMap, VectorMap};
use crate::scene::{normalize_or_zero, Camera};

pub const TRANSFORMS_FILE: &str = "transforms.json";
pub const ALIGNMENT_FILE: &str = "alignment.txt";
pub const IMAGES_DIR: &str = "images";
pub const DEPTH_DIR: &str = "depth";
pub const MONO_DEPTH_DIR: &str = "mono_depth";
pub const NORMALS_DIR: &str = "normals";
pub const SPARSE_DEPTH_DIR: &str = "sparse_depth";

/// Monocular depth PNGs store the unitless value times this.
pub const MONO_DEPTH_SCALE: f64 = 1000.0;

/// One dataset record.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainFrame {
    pub frame_id: String,
    pub image: VectorMap,
    /// Metric depth; 0 marks invalid pixels.
    pub sensor_depth: Option<ScalarMap>,
    /// Unitless monocular depth, before alignment.
    pub mono_depth: Option<ScalarMap>,
    /// Camera-space unit normals; zero vectors mark missing pixels.
    pub normal_prior: Option<VectorMap>,
    pub sparse_depth: Option<ScalarMap>,
    pub camera: Camera,
    /// Mono-to-metric `(scale, shift)`.
    pub alignment: Option<(f64, f64)>,
}

impl TrainFrame {
    /// Depth supervision for this frame: sensor depth if present, else the
    /// aligned monocular depth.
    pub fn depth_target(&self) -> Option<ScalarMap> {
        if let Some(d) = &self.sensor_depth {
            return Some(d.clone());
        }
        match (&self.mono_depth, self.alignment) {
            (Some(m), Some((a, b))) => Some(crate::align::apply_alignment(m, a, b).0),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.camera.width, self.camera.height);
        let wrap = |e: Error| Error::Dataset(format!("frame {}: {e}", self.frame_id));
        self.image.ensure_dims(w, h).map_err(wrap)?;
        for map in [&self.sensor_depth, &self.mono_depth, &self.sparse_depth]
            .into_iter()
            .flatten()
        {
            map.ensure_dims(w, h).map_err(wrap)?;
        }
        if let Some(n) = &self.normal_prior {
            n.ensure_dims(w, h).map_err(wrap)?;
            for v in n.as_slice() {
                let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if len != 0.0 && (len - 1.0).abs() > 2e-2 {
                    return Err(wrap(Error::InvalidArgument(format!(
                        "normal prior of length {len}"
                    ))));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformsFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: usize,
    pub h: usize,
    pub frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file_path: String,
    /// Row-major 4×4 camera-to-world.
    pub transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Poses use the OpenGL convention (+y up, −z forward); negate the y and
    /// z camera axes on load.
    pub ogl_pose: bool,
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<TrainFrame>> {
    load_dataset_with(root, LoadOptions::default())
}

pub fn load_dataset_with(root: impl AsRef<Path>, opts: LoadOptions) -> Result<Vec<TrainFrame>> {
    let root = root.as_ref();
    let transforms_path = root.join(TRANSFORMS_FILE);
    if !transforms_path.is_file() {
        return Err(Error::Dataset(format!(
            "missing {}",
            transforms_path.display()
        )));
    }
    let text = std::fs::read_to_string(&transforms_path)
        .map_err(|e| Error::io(&transforms_path, e))?;
    let transforms: TransformsFile = serde_json::from_str(&text)
        .map_err(|e| Error::Dataset(format!("{}: {e}", transforms_path.display())))?;

    let mut entries: Vec<(String, &FrameEntry)> = transforms
        .frames
        .iter()
        .map(|f| (file_stem(&f.file_path), f))
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    check_orphans(root, &entries)?;

    let alignments = match root.join(ALIGNMENT_FILE) {
        p if p.is_file() => read_alignment_cache(p)?,
        _ => Vec::new(),
    };

    let frames = entries
        .par_iter()
        .map(|(id, entry)| {
            let camera = frame_camera(&transforms, entry, opts)
                .map_err(|e| Error::Dataset(format!("frame {id}: {e}")))?;
            let (w, h) = (camera.width, camera.height);
            let image = read_rgb(&root.join(&entry.file_path))?;
            let optional = |dir: &str| {
                let p = root.join(dir).join(format!("{id}.png"));
                p.is_file().then_some(p)
            };
            let frame = TrainFrame {
                frame_id: id.clone(),
                image,
                sensor_depth: optional(DEPTH_DIR)
                    .map(|p| read_u16_scaled(&p, 1e-3))
                    .transpose()?,
                mono_depth: optional(MONO_DEPTH_DIR)
                    .map(|p| read_u16_scaled(&p, 1.0 / MONO_DEPTH_SCALE))
                    .transpose()?,
                normal_prior: optional(NORMALS_DIR).map(|p| read_normals(&p)).transpose()?,
                sparse_depth: optional(SPARSE_DEPTH_DIR)
                    .map(|p| read_u16_scaled(&p, 1e-3))
                    .transpose()?,
                camera,
                alignment: alignments
                    .iter()
                    .find(|r| &r.frame_id == id)
                    .map(|r| (r.a, r.b)),
            };
            debug_assert_eq!(frame.camera.width, w);
            debug_assert_eq!(frame.camera.height, h);
            frame.validate()?;
            Ok(frame)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(frames)
}

fn file_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn check_orphans(root: &Path, entries: &[(String, &FrameEntry)]) -> Result<()> {
    let posed: BTreeSet<&str> = entries.iter().map(|(id, _)| id.as_str()).collect();
    let images_dir = root.join(IMAGES_DIR);
    let mut on_disk = BTreeSet::new();
    if images_dir.is_dir() {
        for entry in std::fs::read_dir(&images_dir).map_err(|e| Error::io(&images_dir, e))? {
            let path = entry.map_err(|e| Error::io(&images_dir, e))?.path();
            if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                on_disk.insert(file_stem(&path.to_string_lossy()));
            }
        }
    }
    let missing_images: Vec<&str> = entries
        .iter()
        .filter(|(_, e)| !root.join(&e.file_path).is_file())
        .map(|(id, _)| id.as_str())
        .collect();
    let unposed: Vec<&String> = on_disk
        .iter()
        .filter(|id| !posed.contains(id.as_str()))
        .collect();
    if !missing_images.is_empty() || !unposed.is_empty() {
        return Err(Error::Dataset(format!(
            "image/pose mismatch: poses without images {missing_images:?}, images without poses {unposed:?}"
        )));
    }
    Ok(())
}

fn frame_camera(t: &TransformsFile, e: &FrameEntry, opts: LoadOptions) -> Result<Camera> {
    let mut pose = Matrix4::from_fn(|r, c| e.transform_matrix[r][c]);
    if opts.ogl_pose {
        for r in 0..3 {
            pose[(r, 1)] = -pose[(r, 1)];
            pose[(r, 2)] = -pose[(r, 2)];
        }
    }
    let rot: Matrix3<f64> = pose.fixed_view::<3, 3>(0, 0).into_owned();
    let det = rot.determinant();
    if !det.is_finite() || det.abs() < 1e-9 {
        return Err(Error::InvalidArgument("non-invertible pose".into()));
    }
    // Snap slightly non-orthonormal rotations (text round-off) to the
    // nearest rotation; reject anything further off or reflected.
    let ortho_err = (rot.transpose() * rot - Matrix3::identity()).abs().max();
    if ortho_err > 1e-6 {
        if ortho_err > 1e-3 || det < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "pose rotation is not orthonormal (error {ortho_err:e})"
            )));
        }
        let svd = rot.svd(true, true);
        let fixed = svd.u.unwrap() * svd.v_t.unwrap();
        pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&fixed);
    }
    Camera::new(
        e.fx.unwrap_or(t.fx),
        e.fy.unwrap_or(t.fy),
        e.cx.unwrap_or(t.cx),
        e.cy.unwrap_or(t.cy),
        e.w.unwrap_or(t.w),
        e.h.unwrap_or(t.h),
        pose,
    )
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_rgb(path: &Path) -> Result<VectorMap> {
    let img = open_image(path)?.into_rgb32f();
    let (w, h) = img.dimensions();
    Grid::from_vec(
        w as usize,
        h as usize,
        img.pixels()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect(),
    )
}

fn read_u16_scaled(path: &Path, scale: f64) -> Result<ScalarMap> {
    let img = open_image(path)?.into_luma16();
    let (w, h) = img.dimensions();
    Grid::from_vec(
        w as usize,
        h as usize,
        img.pixels().map(|p| p[0] as f64 * scale).collect(),
    )
}

fn read_normals(path: &Path) -> Result<VectorMap> {
    let img = open_image(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    Grid::from_vec(
        w as usize,
        h as usize,
        img.pixels().map(|p| decode_normal(p.0)).collect(),
    )
}

/// `n = 2·v/255 − 1`, renormalized; `(0, 0, 0)` decodes to the zero vector.
pub fn decode_normal(px: [u8; 3]) -> [f64; 3] {
    if px == [0, 0, 0] {
        return [0.0; 3];
    }
    normalize_or_zero(px.map(|v| 2.0 * v as f64 / 255.0 - 1.0))
}

pub fn encode_normal(n: [f64; 3]) -> [u8; 3] {
    if n == [0.0; 3] {
        return [0, 0, 0];
    }
    n.map(|v| ((v + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn save_image(path: &Path, f: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    f(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_rgb(path: &Path, img: &VectorMap) -> Result<()> {
    let out = RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        image::Rgb(
            img.get(x as usize, y as usize)
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        )
    });
    save_image(path, |p| out.save(p))
}

/// Writes `value / scale` as 16-bit, saturating at the u16 range.
pub fn write_u16_scaled(path: &Path, map: &ScalarMap, scale: f64) -> Result<()> {
    let out: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(map.width() as u32, map.height() as u32, |x, y| {
            let v = (map.get(x as usize, y as usize) / scale).round();
            Luma([v.clamp(0.0, u16::MAX as f64) as u16])
        });
    save_image(path, |p| out.save(p))
}

pub fn write_normals(path: &Path, normals: &VectorMap) -> Result<()> {
    let out = RgbImage::from_fn(normals.width() as u32, normals.height() as u32, |x, y| {
        image::Rgb(encode_normal(*normals.get(x as usize, y as usize)))
    });
    save_image(path, |p| out.save(p))
}

pub fn write_transforms(root: &Path, transforms: &TransformsFile) -> Result<()> {
    let path: PathBuf = root.join(TRANSFORMS_FILE);
    let text = serde_json::to_string_pretty(transforms)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Frames split by position: every `every_n`-th (starting at 0) is held out.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<TrainFrame>,
    pub eval: Vec<TrainFrame>,
    /// Set when there were fewer than `every_n` frames, so nothing was held
    /// out.
    pub warning: bool,
}

pub fn split_train_eval(frames: Vec<TrainFrame>, every_n: usize) -> Result<Split> {
    if every_n < 2 {
        return Err(Error::InvalidArgument(format!(
            "every_n must be at least 2, got {every_n}"
        )));
    }
    if frames.len() < every_n {
        return Ok(Split {
            train: frames,
            eval: Vec::new(),
            warning: true,
        });
    }
    let (eval, train): (Vec<_>, Vec<_>) = frames
        .into_iter()
        .enumerate()
        .partition(|(i, _)| i % every_n == 0);
    Ok(Split {
        train: train.into_iter().map(|(_, f)| f).collect(),
        eval: eval.into_iter().map(|(_, f)| f).collect(),
        warning: false,
    })
}
