//! Synthetic box-room fixtures with exact depth and normals.
//!
//! The room is an axis-aligned box centered at the origin whose six inner
//! faces carry checkerboards. Cameras sit on a horizontal ring inside it.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    write_normals, write_rgb, write_transforms, write_u16_scaled, FrameEntry, TrainFrame,
    TransformsFile, DEPTH_DIR, IMAGES_DIR, MONO_DEPTH_DIR, MONO_DEPTH_SCALE, NORMALS_DIR,
    SPARSE_DEPTH_DIR,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarMap, VectorMap};
use crate::pointset::{write_mesh_ply, TriangleMesh};
use crate::scene::Camera;

/// File name of the exported ground-truth box mesh.
pub const GT_MESH_FILE: &str = "gt_mesh.ply";
/// Monocular depth is written as `MONO_SCALE · depth + MONO_SHIFT`.
pub const MONO_SCALE: f64 = 2.0;
pub const MONO_SHIFT: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub radius: f64,
    /// World y of the ring.
    pub height: f64,
    pub center: [f64; 3],
    /// Standard deviation (m) of the per-view look-at jitter.
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxScene {
    pub half_extents: [f64; 3],
    /// Two checker colors per face, ordered −x, +x, −y, +y, −z, +z.
    pub face_colors: [[[f64; 3]; 2]; 6],
    pub cell_size: f64,
    pub ring: CameraRing,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
}

impl Default for BoxScene {
    fn default() -> Self {
        Self {
            half_extents: [2.0, 1.5, 2.0],
            face_colors: [
                [[0.85, 0.25, 0.2], [0.95, 0.75, 0.6]],
                [[0.2, 0.55, 0.85], [0.7, 0.85, 0.95]],
                [[0.3, 0.3, 0.3], [0.8, 0.8, 0.8]],
                [[0.55, 0.4, 0.2], [0.9, 0.8, 0.55]],
                [[0.25, 0.7, 0.3], [0.75, 0.95, 0.7]],
                [[0.6, 0.3, 0.7], [0.9, 0.75, 0.95]],
            ],
            cell_size: 0.5,
            ring: CameraRing {
                radius: 1.0,
                height: 0.0,
                center: [0.0; 3],
                jitter: 0.15,
            },
            width: 64,
            height: 64,
            focal: 40.0,
        }
    }
}

/// Corruption applied to rendered sensor depth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthNoise {
    /// Additive Gaussian noise (m) on every pixel.
    pub sigma: f64,
    /// Relative Gaussian noise on pixels within `edge_radius` of a color or
    /// normal edge.
    pub edge_sigma: f64,
    pub edge_radius: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub noise: DepthNoise,
    /// Also write affinely distorted monocular depth.
    pub mono: bool,
    /// Fraction of pixels written to the sparse depth map; 0 writes none.
    pub sparse_fraction: f64,
}

/// What a camera ray hits.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Hit {
    depth: f64,
    face: usize,
    parity: usize,
    point: Vector3<f64>,
}

impl BoxScene {
    pub fn validate(&self) -> Result<()> {
        if !self.half_extents.iter().all(|h| *h > 0.0) {
            return Err(Error::Fixture("half extents must be positive".into()));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::Fixture("cell size must be positive".into()));
        }
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) {
            return Err(Error::Fixture("image size and focal must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|k| p[k].abs() < self.half_extents[k])
    }

    /// Length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        2.0 * Vector3::from(self.half_extents).norm()
    }

    /// Inward unit normal of face `f` in world space.
    pub fn face_normal(face: usize) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[face / 2] = if face % 2 == 0 { 1.0 } else { -1.0 };
        n
    }

    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Hit {
        let mut best = (f64::INFINITY, 0usize);
        for k in 0..3 {
            if dir[k] == 0.0 {
                continue;
            }
            let side = if dir[k] > 0.0 { 1.0 } else { -1.0 };
            let t = (side * self.half_extents[k] - origin[k]) / dir[k];
            if t < best.0 {
                best = (t, 2 * k + usize::from(dir[k] > 0.0));
            }
        }
        let (t, face) = best;
        let point = origin + dir * t;
        let axis = face / 2;
        let cell = |k: usize| ((point[k] + self.half_extents[k]) / self.cell_size).floor() as i64;
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        Hit {
            depth: t,
            face,
            parity: (cell(a) + cell(b)).rem_euclid(2) as usize,
            point,
        }
    }

    /// Cameras on the ring, evenly spaced, each looking at the ring center
    /// plus seeded jitter.
    pub fn ring_cameras(&self, n: usize, seed: u64) -> Result<Vec<Camera>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, self.ring.jitter.max(0.0))
            .map_err(|e| Error::Fixture(e.to_string()))?;
        let c = self.ring.center;
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        (0..n)
            .map(|i| {
                let theta = TAU * i as f64 / n as f64;
                let eye = [
                    c[0] + self.ring.radius * theta.cos(),
                    self.ring.height,
                    c[2] + self.ring.radius * theta.sin(),
                ];
                if !self.contains(&eye) {
                    return Err(Error::Fixture(format!("camera {i} at {eye:?} is outside the box")));
                }
                let target = [
                    c[0] + jitter.sample(&mut rng),
                    c[1] + jitter.sample(&mut rng),
                    c[2] + jitter.sample(&mut rng),
                ];
                Camera::look_at(
                    eye,
                    target,
                    [0.0, -1.0, 0.0],
                    [self.focal, self.focal, cx, cy],
                    self.width,
                    self.height,
                )
            })
            .collect()
    }

    /// The closed box surface as 12 triangles with inward winding.
    pub fn mesh(&self) -> TriangleMesh {
        let [hx, hy, hz] = self.half_extents;
        let vertices = (0..8)
            .map(|i| {
                [
                    if i & 1 == 0 { -hx } else { hx },
                    if i & 2 == 0 { -hy } else { hy },
                    if i & 4 == 0 { -hz } else { hz },
                ]
            })
            .collect();
        let quads = [
            vec![2, 6, 4, 0],
            vec![5, 7, 3, 1],
            vec![4, 5, 1, 0],
            vec![3, 7, 6, 2],
            vec![1, 3, 2, 0],
            vec![6, 7, 5, 4],
        ];
        TriangleMesh::from_polygons(vertices, &quads).expect("box mesh is well formed")
    }
}

struct Rendered {
    image: VectorMap,
    depth: ScalarMap,
    normals: VectorMap,
    labels: Grid<(usize, usize)>,
}

fn trace(scene: &BoxScene, cam: &Camera) -> Result<Rendered> {
    scene.validate()?;
    let origin = cam.position();
    if !scene.contains(&[origin.x, origin.y, origin.z]) {
        return Err(Error::Fixture(format!(
            "camera at {:?} is outside the box",
            [origin.x, origin.y, origin.z]
        )));
    }
    let rot = cam.rotation();
    let w2c = cam.world_to_cam_rotation();
    let hits: Vec<Hit> = (0..cam.width * cam.height)
        .into_par_iter()
        .map(|i| {
            let (u, v) = ((i % cam.width) as f64, (i / cam.width) as f64);
            let d_cam = Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
            scene.intersect(&origin, &(rot * d_cam))
        })
        .collect();
    let (w, h) = (cam.width, cam.height);
    let at = |x: usize, y: usize| &hits[y * w + x];
    Ok(Rendered {
        image: Grid::from_fn(w, h, |x, y| {
            let hit = at(x, y);
            scene.face_colors[hit.face][hit.parity]
        }),
        depth: Grid::from_fn(w, h, |x, y| at(x, y).depth),
        normals: Grid::from_fn(w, h, |x, y| {
            let n = w2c * Vector3::from(BoxScene::face_normal(at(x, y).face));
            [n.x, n.y, n.z]
        }),
        labels: Grid::from_fn(w, h, |x, y| (at(x, y).face, at(x, y).parity)),
    })
}

/// Pixels within `radius` (Chebyshev) of a change in face or checker cell.
fn edge_band(labels: &Grid<(usize, usize)>, radius: usize) -> Grid<bool> {
    let (w, h) = labels.dims();
    let edge = Grid::from_fn(w, h, |x, y| {
        let l = labels[(x, y)];
        (x + 1 < w && labels[(x + 1, y)] != l)
            || (x > 0 && labels[(x - 1, y)] != l)
            || (y + 1 < h && labels[(x, y + 1)] != l)
            || (y > 0 && labels[(x, y - 1)] != l)
    });
    let r = radius as isize;
    Grid::from_fn(w, h, |x, y| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (qx, qy) = (x as isize + dx, y as isize + dy);
                qx >= 0 && qy >= 0 && (qx as usize) < w && (qy as usize) < h && edge[(qx as usize, qy as usize)]
            })
        })
    })
}

/// Exact image, depth and camera-space inward normals for `cam`.
pub fn render_gt(scene: &BoxScene, cam: &Camera) -> Result<TrainFrame> {
    render_gt_with(scene, cam, &DepthNoise::default(), 0)
}

/// [`render_gt`] followed by seeded depth corruption.
pub fn render_gt_with(
    scene: &BoxScene,
    cam: &Camera,
    noise: &DepthNoise,
    seed: u64,
) -> Result<TrainFrame> {
    let r = trace(scene, cam)?;
    let mut depth = r.depth;
    if noise.sigma > 0.0 || noise.edge_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let band = edge_band(&r.labels, noise.edge_radius);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for (d, &edge) in depth.as_mut_slice().iter_mut().zip(band.as_slice()) {
            let mut v = *d + noise.sigma * unit.sample(&mut rng);
            if edge && noise.edge_sigma > 0.0 {
                v *= 1.0 + noise.edge_sigma * unit.sample(&mut rng);
            }
            *d = v.max(1e-3);
        }
    }
    Ok(TrainFrame {
        frame_id: String::new(),
        image: r.image,
        sensor_depth: Some(depth),
        mono_depth: None,
        normal_prior: Some(r.normals),
        sparse_depth: None,
        camera: cam.clone(),
        alignment: None,
    })
}

pub fn frame_id(i: usize) -> String {
    format!("frame_{i:04}")
}

fn pose_rows(cam: &Camera) -> [[f64; 4]; 4] {
    std::array::from_fn(|r| std::array::from_fn(|c| cam.cam_to_world[(r, c)]))
}

/// Writes an `n_views` dataset of `scene` under `root` in the on-disk
/// dataset layout, plus the box mesh. Returns the frames as rendered
/// (before PNG quantization).
pub fn make_dataset(
    scene: &BoxScene,
    root: impl AsRef<Path>,
    n_views: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<Vec<TrainFrame>> {
    let root = root.as_ref();
    if n_views < 2 {
        return Err(Error::Fixture(format!("need at least 2 views, got {n_views}")));
    }
    let cameras = scene.ring_cameras(n_views, seed)?;
    let frames: Vec<TrainFrame> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let view_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            let mut frame = render_gt_with(scene, cam, &opts.noise, view_seed)?;
            frame.frame_id = frame_id(i);
            let truth = trace(scene, cam)?.depth;
            if opts.mono {
                frame.mono_depth = Some(truth.map(|d| MONO_SCALE * d + MONO_SHIFT));
            }
            if opts.sparse_fraction > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(view_seed ^ 0x5EED);
                frame.sparse_depth = Some(truth.map(|&d| {
                    if rng.gen::<f64>() < opts.sparse_fraction {
                        d
                    } else {
                        0.0
                    }
                }));
            }
            Ok(frame)
        })
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    frames.par_iter().try_for_each(|f| -> Result<()> {
        let png = |dir: &str| root.join(dir).join(format!("{}.png", f.frame_id));
        write_rgb(&png(IMAGES_DIR), &f.image)?;
        if let Some(d) = &f.sensor_depth {
            write_u16_scaled(&png(DEPTH_DIR), d, 1e-3)?;
        }
        if let Some(n) = &f.normal_prior {
            write_normals(&png(NORMALS_DIR), n)?;
        }
        if let Some(m) = &f.mono_depth {
            write_u16_scaled(&png(MONO_DEPTH_DIR), m, 1.0 / MONO_DEPTH_SCALE)?;
        }
        if let Some(s) = &f.sparse_depth {
            write_u16_scaled(&png(SPARSE_DEPTH_DIR), s, 1e-3)?;
        }
        Ok(())
    })?;
    let cam0 = &cameras[0];
    write_transforms(
        root,
        &TransformsFile {
            fx: cam0.fx,
            fy: cam0.fy,
            cx: cam0.cx,
            cy: cam0.cy,
            w: cam0.width,
            h: cam0.height,
            frames: frames
                .iter()
                .map(|f| FrameEntry {
                    file_path: format!("{IMAGES_DIR}/{}.png", f.frame_id),
                    transform_matrix: pose_rows(&f.camera),
                    fx: None,
                    fy: None,
                    cx: None,
                    cy: None,
                    w: None,
                    h: None,
                })
                .collect(),
        },
    )?;
    write_mesh_ply(&scene.mesh(), root.join(GT_MESH_FILE))?;
    Ok(frames)
}
