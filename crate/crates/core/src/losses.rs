//! Training losses with analytic gradients w.r.t. the rendered buffers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::TrainFrame;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarMap, VectorMap};
use crate::raster::BufferGrads;
use crate::scene::{argmin3, GaussianScene, RenderBuffers};
use crate::ssim::ssim_channel;

/// SSIM share of the photometric loss.
pub const PHOTOMETRIC_SSIM_WEIGHT: f64 = 0.2;
/// SSIM share of the DSSIM+L1 depth loss.
pub const DEPTH_DSSIM_WEIGHT: f64 = 0.85;
/// Huber threshold as a fraction of the largest residual.
pub const HUBER_DELTA_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DepthLossKind {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "logl1")]
    LogL1,
    #[serde(rename = "huberl1")]
    HuberL1,
    #[serde(rename = "dssiml1")]
    DssimL1,
    #[serde(rename = "eas")]
    Eas,
    #[default]
    #[serde(rename = "edge-logl1")]
    EdgeLogL1,
}

impl DepthLossKind {
    pub const ALL: [DepthLossKind; 7] = [
        Self::Mse,
        Self::L1,
        Self::LogL1,
        Self::HuberL1,
        Self::DssimL1,
        Self::Eas,
        Self::EdgeLogL1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::L1 => "l1",
            Self::LogL1 => "logl1",
            Self::HuberL1 => "huberl1",
            Self::DssimL1 => "dssiml1",
            Self::Eas => "eas",
            Self::EdgeLogL1 => "edge-logl1",
        }
    }

    /// Whether the per-pixel terms are scaled by the image edge weight.
    pub fn needs_image(self) -> bool {
        matches!(self, Self::Eas | Self::EdgeLogL1)
    }
}

impl fmt::Display for DepthLossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DepthLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown depth loss kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleReduction {
    #[default]
    Mean,
    Sum,
}

/// A scalar loss and its gradient w.r.t. one buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct MapLoss<T> {
    pub value: f64,
    pub grad: Grid<T>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn intensity(image: &VectorMap) -> ScalarMap {
    image.map(|c| (c[0] + c[1] + c[2]) / 3.0)
}

/// `exp(−|∇I|)` on the channel-mean intensity, central differences with
/// replicated borders.
pub fn edge_weight(image: &VectorMap) -> ScalarMap {
    let i = intensity(image);
    let (w, h) = i.dims();
    Grid::from_fn(w, h, |x, y| {
        let gx = (i[(( x + 1).min(w - 1), y)] - i[(x.saturating_sub(1), y)]) / 2.0;
        let gy = (i[(x, (y + 1).min(h - 1))] - i[(x, y.saturating_sub(1))]) / 2.0;
        (-(gx * gx + gy * gy).sqrt()).exp()
    })
}

/// Pixels with finite positive ground truth that the optional mask keeps.
pub fn depth_validity(gt: &ScalarMap, mask: Option<&Grid<bool>>) -> Result<Grid<bool>> {
    if let Some(m) = mask {
        gt.ensure_same_dims(m)?;
    }
    let (w, h) = gt.dims();
    Ok(Grid::from_fn(w, h, |x, y| {
        let d = gt[(x, y)];
        d.is_finite() && d > 0.0 && mask.map_or(true, |m| m[(x, y)])
    }))
}

/// Depth loss of `kind`, averaged over valid pixels (finite `gt > 0` and
/// `mask`). `image` supplies the edge weight for the edge-aware kinds.
pub fn depth_loss(
    pred: &ScalarMap,
    gt: &ScalarMap,
    mask: Option<&Grid<bool>>,
    kind: DepthLossKind,
    image: Option<&VectorMap>,
) -> Result<MapLoss<f64>> {
    pred.ensure_same_dims(gt)?;
    let valid = depth_validity(gt, mask)?;
    let (w, h) = pred.dims();
    let idx: Vec<usize> = (0..w * h).filter(|&i| valid.as_slice()[i]).collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = idx.len() as f64;
    let p = pred.as_slice();
    let g = gt.as_slice();
    let mut grad = vec![0.0; w * h];

    let weights = if kind.needs_image() {
        let image = image.ok_or_else(|| {
            Error::InvalidArgument(format!("depth loss {kind} needs the RGB image"))
        })?;
        pred.ensure_same_dims(image)?;
        Some(edge_weight(image))
    } else {
        None
    };
    let weight = |i: usize| weights.as_ref().map_or(1.0, |wt| wt.as_slice()[i]);

    let value = match kind {
        DepthLossKind::Mse | DepthLossKind::L1 | DepthLossKind::LogL1 => {
            let mut sum = 0.0;
            for &i in &idx {
                let r = p[i] - g[i];
                let (v, d) = match kind {
                    DepthLossKind::Mse => (r * r, 2.0 * r),
                    DepthLossKind::L1 => (r.abs(), sign(r)),
                    _ => ((1.0 + r.abs()).ln(), sign(r) / (1.0 + r.abs())),
                };
                sum += v;
                grad[i] = d / n;
            }
            sum / n
        }
        DepthLossKind::Eas | DepthLossKind::EdgeLogL1 => {
            let mut sum = 0.0;
            for &i in &idx {
                let r = p[i] - g[i];
                let (v, d) = if kind == DepthLossKind::Eas {
                    (r.abs(), sign(r))
                } else {
                    ((1.0 + r.abs()).ln(), sign(r) / (1.0 + r.abs()))
                };
                let wt = weight(i);
                sum += wt * v;
                grad[i] = wt * d / n;
            }
            sum / n
        }
        DepthLossKind::HuberL1 => {
            let mut arg = idx[0];
            for &i in &idx {
                if (p[i] - g[i]).abs() > (p[arg] - g[arg]).abs() {
                    arg = i;
                }
            }
            let delta = HUBER_DELTA_FRACTION * (p[arg] - g[arg]).abs();
            let mut sum = 0.0;
            let mut d_delta = 0.0;
            for &i in &idx {
                let r = p[i] - g[i];
                let a = r.abs();
                if a <= delta {
                    sum += a;
                    grad[i] = sign(r) / n;
                } else {
                    sum += (a * a + delta * delta) / (2.0 * delta);
                    grad[i] = r / delta / n;
                    d_delta += (delta * delta - a * a) / (2.0 * delta * delta);
                }
            }
            grad[arg] += d_delta / n * HUBER_DELTA_FRACTION * sign(p[arg] - g[arg]);
            sum / n
        }
        DepthLossKind::DssimL1 => {
            let s = ssim_channel(p, g, w, h, Some(valid.as_slice()), true)?;
            let s_grad = s.grad.expect("requested");
            let mut l1 = 0.0;
            for &i in &idx {
                let r = p[i] - g[i];
                l1 += r.abs();
                grad[i] = (1.0 - DEPTH_DSSIM_WEIGHT) * sign(r) / n
                    - DEPTH_DSSIM_WEIGHT / 2.0 * s_grad[i];
            }
            DEPTH_DSSIM_WEIGHT * (1.0 - s.mean) / 2.0 + (1.0 - DEPTH_DSSIM_WEIGHT) * l1 / n
        }
    };
    Ok(MapLoss {
        value,
        grad: Grid::from_vec(w, h, grad)?,
    })
}

/// `0.8·L1 + 0.2·(1 − SSIM)/2` over all pixels and channels.
pub fn photometric_loss(pred: &VectorMap, gt: &VectorMap) -> Result<MapLoss<[f64; 3]>> {
    pred.ensure_same_dims(gt)?;
    let (w, h) = pred.dims();
    let n = (w * h * 3) as f64;
    let lam = PHOTOMETRIC_SSIM_WEIGHT;
    let mut grad = vec![[0.0; 3]; w * h];
    let mut l1 = 0.0;
    for (i, (p, g)) in pred.as_slice().iter().zip(gt.as_slice()).enumerate() {
        for c in 0..3 {
            let r = p[c] - g[c];
            l1 += r.abs();
            grad[i][c] = (1.0 - lam) * sign(r) / n;
        }
    }
    let mut ssim = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = pred.as_slice().iter().map(|v| v[c]).collect();
        let y: Vec<f64> = gt.as_slice().iter().map(|v| v[c]).collect();
        let s = ssim_channel(&x, &y, w, h, None, true)?;
        ssim += s.mean / 3.0;
        for (gi, sg) in grad.iter_mut().zip(s.grad.expect("requested")) {
            gi[c] -= lam / 2.0 * sg / 3.0;
        }
    }
    Ok(MapLoss {
        value: (1.0 - lam) * l1 / n + lam * (1.0 - ssim) / 2.0,
        grad: Grid::from_vec(w, h, grad)?,
    })
}

/// Mean over valid pixels of `Σ_xyz |pred − prior|`. Pixels are valid where
/// the prior is non-zero and the optional mask is set.
pub fn normal_l1_loss(
    pred: &VectorMap,
    prior: &VectorMap,
    mask: Option<&Grid<bool>>,
) -> Result<MapLoss<[f64; 3]>> {
    pred.ensure_same_dims(prior)?;
    if let Some(m) = mask {
        pred.ensure_same_dims(m)?;
    }
    let (w, h) = pred.dims();
    let valid: Vec<usize> = (0..w * h)
        .filter(|&i| {
            let n = prior.as_slice()[i];
            n != [0.0; 3] && mask.map_or(true, |m| m.as_slice()[i])
        })
        .collect();
    if valid.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = valid.len() as f64;
    let mut grad = vec![[0.0; 3]; w * h];
    let mut sum = 0.0;
    for &i in &valid {
        let (p, q) = (pred.as_slice()[i], prior.as_slice()[i]);
        for c in 0..3 {
            sum += (p[c] - q[c]).abs();
            grad[i][c] = sign(p[c] - q[c]) / n;
        }
    }
    Ok(MapLoss {
        value: sum / n,
        grad: Grid::from_vec(w, h, grad)?,
    })
}

/// Total variation of a normal map: L1 norms of forward differences along
/// both axes, divided by the pixel count.
pub fn normal_smooth_loss(pred: &VectorMap) -> Result<MapLoss<[f64; 3]>> {
    let (w, h) = pred.dims();
    if w * h < 2 {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min_width: 2,
            min_height: 1,
        });
    }
    let n = (w * h) as f64;
    let mut grad = Grid::filled(w, h, [0.0; 3]);
    let mut sum = 0.0;
    let mut pair = |a: (usize, usize), b: (usize, usize), grad: &mut VectorMap| {
        let (pa, pb) = (pred[a], pred[b]);
        for c in 0..3 {
            let d = pb[c] - pa[c];
            sum += d.abs();
            grad[b][c] += sign(d) / n;
            grad[a][c] -= sign(d) / n;
        }
    };
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                pair((x, y), (x + 1, y), &mut grad);
            }
            if y + 1 < h {
                pair((x, y), (x, y + 1), &mut grad);
            }
        }
    }
    Ok(MapLoss {
        value: sum / n,
        grad,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleLoss {
    pub value: f64,
    /// Gradient w.r.t. each Gaussian's `log_scale`.
    pub grad: Vec<[f64; 3]>,
}

/// Reduction over Gaussians of the smallest activated scale.
pub fn scale_loss(scene: &GaussianScene, reduction: ScaleReduction) -> Result<ScaleLoss> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let norm = match reduction {
        ScaleReduction::Mean => 1.0 / scene.len() as f64,
        ScaleReduction::Sum => 1.0,
    };
    let mut value = 0.0;
    let grad = scene
        .gaussians
        .iter()
        .map(|g| {
            let k = argmin3(&g.log_scale);
            let s = g.log_scale[k].exp();
            value += s;
            let mut d = [0.0; 3];
            d[k] = s * norm;
            d
        })
        .collect();
    Ok(ScaleLoss {
        value: value * norm,
        grad,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub depth: f64,
    pub normal_l1: f64,
    pub normal_smooth: f64,
    /// Multiplier on the scale term (1 in the reference objective).
    pub scale: f64,
    pub scale_reduction: ScaleReduction,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            depth: 0.2,
            normal_l1: 0.1,
            normal_smooth: 0.1,
            scale: 1.0,
            scale_reduction: ScaleReduction::Mean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub photometric: f64,
    pub depth: f64,
    pub scale: f64,
    pub normal_l1: f64,
    pub normal_smooth: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    /// Recombines the components with the stored weights.
    pub fn weighted_sum(&self) -> f64 {
        let w = &self.weights;
        self.photometric
            + w.depth * self.depth
            + w.scale * self.scale
            + w.normal_l1 * self.normal_l1
            + w.normal_smooth * self.normal_smooth
    }

    pub fn is_finite(&self) -> bool {
        [
            self.photometric,
            self.depth,
            self.scale,
            self.normal_l1,
            self.normal_smooth,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Supervision for one view.
#[derive(Clone, Copy, Debug)]
pub struct LossTargets<'a> {
    pub image: &'a VectorMap,
    pub depth: Option<&'a ScalarMap>,
    pub normals: Option<&'a VectorMap>,
    pub mask: Option<&'a Grid<bool>>,
}

#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub breakdown: LossBreakdown,
    pub buffer_grads: BufferGrads,
    /// Gradient of the scale term w.r.t. each Gaussian's `log_scale`,
    /// already weighted.
    pub log_scale_grads: Vec<[f64; 3]>,
}

/// Full objective for one frame. Depth and normal-prior terms are skipped
/// when the frame lacks the prior.
pub fn total_loss(
    buffers: &RenderBuffers,
    frame: &TrainFrame,
    scene: &GaussianScene,
    weights: &LossWeights,
    depth_kind: DepthLossKind,
) -> Result<TotalLoss> {
    let depth = frame.depth_target();
    let targets = LossTargets {
        image: &frame.image,
        depth: depth.as_ref(),
        normals: frame.normal_prior.as_ref(),
        mask: None,
    };
    total_loss_with(buffers, &targets, scene, weights, depth_kind)
}

fn add_scaled<T: Copy>(acc: &mut Grid<T>, g: &Grid<T>, s: f64, add: impl Fn(&mut T, &T, f64)) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
        add(a, b, s);
    }
}

fn add_vec(a: &mut [f64; 3], b: &[f64; 3], s: f64) {
    for c in 0..3 {
        a[c] += s * b[c];
    }
}

pub fn total_loss_with(
    buffers: &RenderBuffers,
    targets: &LossTargets<'_>,
    scene: &GaussianScene,
    weights: &LossWeights,
    depth_kind: DepthLossKind,
) -> Result<TotalLoss> {
    let (w, h) = (buffers.width(), buffers.height());
    let mut grads = BufferGrads::zeros(w, h);

    let photo = photometric_loss(&buffers.color, targets.image)?;
    grads.color = photo.grad;

    let mut depth = 0.0;
    if let Some(gt) = targets.depth {
        match depth_loss(&buffers.depth, gt, targets.mask, depth_kind, Some(targets.image)) {
            Ok(l) => {
                depth = l.value;
                add_scaled(&mut grads.depth, &l.grad, weights.depth, |a, b, s| *a += s * b);
            }
            Err(Error::EmptyMask) => {}
            Err(e) => return Err(e),
        }
    }

    let mut normal_l1 = 0.0;
    if let Some(prior) = targets.normals {
        match normal_l1_loss(&buffers.normal, prior, targets.mask) {
            Ok(l) => {
                normal_l1 = l.value;
                add_scaled(&mut grads.normal, &l.grad, weights.normal_l1, add_vec);
            }
            Err(Error::EmptyMask) => {}
            Err(e) => return Err(e),
        }
    }

    let smooth = normal_smooth_loss(&buffers.normal)?;
    add_scaled(&mut grads.normal, &smooth.grad, weights.normal_smooth, add_vec);

    let scale = scale_loss(scene, weights.scale_reduction)?;
    let log_scale_grads = scale
        .grad
        .iter()
        .map(|g| g.map(|v| v * weights.scale))
        .collect();

    let mut breakdown = LossBreakdown {
        photometric: photo.value,
        depth,
        scale: scale.value,
        normal_l1,
        normal_smooth: smooth.value,
        total: 0.0,
        weights: *weights,
    };
    breakdown.total = breakdown.weighted_sum();
    Ok(TotalLoss {
        breakdown,
        buffer_grads: grads,
        log_scale_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_components_weigh_to_reference_total() {
        let b = LossBreakdown {
            photometric: 1.0,
            depth: 1.0,
            scale: 1.0,
            normal_l1: 1.0,
            normal_smooth: 1.0,
            total: 0.0,
            weights: LossWeights::default(),
        };
        assert!((b.weighted_sum() - 2.4).abs() < 1e-12);
    }

    fn rand_map(seed: u64, w: usize, h: usize, lo: f64, hi: f64) -> ScalarMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(w, h, |_, _| rng.gen_range(lo..hi))
    }

    fn rand_vec_map(seed: u64, w: usize, h: usize) -> VectorMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    fn fd_scalar(map: &ScalarMap, f: impl Fn(&ScalarMap) -> f64) -> Vec<f64> {
        let eps = 1e-6;
        (0..map.len())
            .map(|i| {
                let mut p = map.clone();
                p.as_mut_slice()[i] += eps;
                let mut m = map.clone();
                m.as_mut_slice()[i] -= eps;
                (f(&p) - f(&m)) / (2.0 * eps)
            })
            .collect()
    }

    fn fd_vector(map: &VectorMap, f: impl Fn(&VectorMap) -> f64) -> Vec<[f64; 3]> {
        let eps = 1e-6;
        (0..map.len())
            .map(|i| {
                let mut out = [0.0; 3];
                for (c, o) in out.iter_mut().enumerate() {
                    let mut p = map.clone();
                    p.as_mut_slice()[i][c] += eps;
                    let mut m = map.clone();
                    m.as_mut_slice()[i][c] -= eps;
                    *o = (f(&p) - f(&m)) / (2.0 * eps);
                }
                out
            })
            .collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-8 + 1e-3 * a.abs().max(b.abs())
    }

    #[test]
    fn edge_weight_examples() {
        let flat = Grid::filled(5, 4, [0.3; 3]);
        assert!(edge_weight(&flat).as_slice().iter().all(|&g| g == 1.0));
        let step = Grid::from_fn(6, 3, |x, _| if x < 3 { [0.0; 3] } else { [1.0; 3] });
        let g = edge_weight(&step);
        for y in 0..3 {
            assert!((g[(2, y)] - (-0.5f64).exp()).abs() < 1e-15);
            assert!((g[(3, y)] - (-0.5f64).exp()).abs() < 1e-15);
            assert_eq!(g[(0, y)], 1.0);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in DepthLossKind::ALL {
            assert_eq!(k.name().parse::<DepthLossKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("huber".parse::<DepthLossKind>().is_err());
    }

    #[test]
    fn depth_examples() {
        let img = rand_vec_map(0, 4, 4);
        let gt = rand_map(1, 4, 4, 0.5, 3.0);
        for k in DepthLossKind::ALL {
            let l = depth_loss(&gt, &gt, None, k, Some(&img)).unwrap();
            assert!(l.value.abs() < 1e-12, "{k}");
        }
        let e = std::f64::consts::E;
        let pred = Grid::filled(1, 1, 1.0 + (e - 1.0));
        let gt = Grid::filled(1, 1, 1.0);
        let l = depth_loss(&pred, &gt, None, DepthLossKind::LogL1, None).unwrap();
        assert!((l.value - 1.0).abs() < 1e-15);
        let flat = Grid::filled(1, 1, [0.5; 3]);
        let l = depth_loss(&pred, &gt, None, DepthLossKind::EdgeLogL1, Some(&flat)).unwrap();
        assert!((l.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn depth_errors() {
        let gt = Grid::filled(2, 2, 0.0);
        let pred = Grid::filled(2, 2, 1.0);
        assert!(matches!(
            depth_loss(&pred, &gt, None, DepthLossKind::L1, None),
            Err(Error::EmptyMask)
        ));
        let gt = Grid::filled(2, 2, 1.0);
        assert!(matches!(
            depth_loss(&pred, &gt, None, DepthLossKind::Eas, None),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            depth_loss(&Grid::filled(3, 2, 1.0), &gt, None, DepthLossKind::L1, None),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn depth_gradients_match_finite_differences() {
        let img = rand_vec_map(2, 8, 8);
        let mut gt = rand_map(3, 8, 8, 0.5, 3.0);
        gt.as_mut_slice()[5] = 0.0;
        gt.as_mut_slice()[17] = -1.0;
        let mask = Grid::from_fn(8, 8, |x, y| (x + y) % 7 != 3);
        let pred = rand_map(4, 8, 8, 0.5, 3.0);
        for k in DepthLossKind::ALL {
            let l = depth_loss(&pred, &gt, Some(&mask), k, Some(&img)).unwrap();
            let fd = fd_scalar(&pred, |p| {
                depth_loss(p, &gt, Some(&mask), k, Some(&img)).unwrap().value
            });
            for (i, (a, b)) in l.grad.as_slice().iter().zip(&fd).enumerate() {
                assert!(close(*a, *b), "{k} pixel {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn photometric_examples_and_gradient() {
        let gt = rand_vec_map(5, 8, 8);
        assert!(photometric_loss(&gt, &gt).unwrap().value.abs() < 1e-12);

        let zero = Grid::filled(8, 8, [0.0; 3]);
        let half = Grid::filled(8, 8, [0.5; 3]);
        let c1 = 0.01f64 * 0.01;
        let ssim = c1 / (0.25 + c1);
        let expect = 0.4 + 0.2 * (1.0 - ssim) / 2.0;
        assert!((photometric_loss(&half, &zero).unwrap().value - expect).abs() < 1e-12);

        let pred = rand_vec_map(6, 8, 8);
        let l = photometric_loss(&pred, &gt).unwrap();
        let fd = fd_vector(&pred, |p| photometric_loss(p, &gt).unwrap().value);
        for (a, b) in l.grad.as_slice().iter().zip(&fd) {
            for c in 0..3 {
                assert!(close(a[c], b[c]), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn normal_l1_examples_and_gradient() {
        let one = |n: [f64; 3]| Grid::filled(1, 1, n);
        let v = |a, b| normal_l1_loss(&one(a), &one(b), None).unwrap().value;
        assert_eq!(v([0.0, 0.0, 1.0], [0.0, 0.0, 1.0]), 0.0);
        assert_eq!(v([0.0, 0.0, 1.0], [0.0, 0.0, -1.0]), 2.0);
        assert_eq!(v([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), 2.0);
        assert!(matches!(
            normal_l1_loss(&one([1.0, 0.0, 0.0]), &one([0.0; 3]), None),
            Err(Error::EmptyMask)
        ));

        let pred = rand_vec_map(7, 8, 8);
        let mut prior = rand_vec_map(8, 8, 8);
        prior.as_mut_slice()[3] = [0.0; 3];
        let l = normal_l1_loss(&pred, &prior, None).unwrap();
        let fd = fd_vector(&pred, |p| normal_l1_loss(p, &prior, None).unwrap().value);
        for (a, b) in l.grad.as_slice().iter().zip(&fd) {
            for c in 0..3 {
                assert!(close(a[c], b[c]));
            }
        }
    }

    #[test]
    fn smooth_examples_and_gradient() {
        assert_eq!(normal_smooth_loss(&Grid::filled(4, 3, [0.1, 0.2, 0.9])).unwrap().value, 0.0);
        let two = Grid::from_vec(2, 1, vec![[0.0, 0.0, 1.0], [0.2, 0.0, 1.0]]).unwrap();
        assert!((normal_smooth_loss(&two).unwrap().value - 0.1).abs() < 1e-15);
        assert!(matches!(
            normal_smooth_loss(&Grid::filled(1, 1, [0.0; 3])),
            Err(Error::TooSmall { .. })
        ));

        let pred = rand_vec_map(9, 8, 8);
        let l = normal_smooth_loss(&pred).unwrap();
        let fd = fd_vector(&pred, |p| normal_smooth_loss(p).unwrap().value);
        for (a, b) in l.grad.as_slice().iter().zip(&fd) {
            for c in 0..3 {
                assert!(close(a[c], b[c]));
            }
        }
    }

    fn two_gaussians() -> GaussianScene {
        let g = |s: f64| Gaussian {
            mean: [0.0; 3],
            quat: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0, s.ln(), 0.5],
            opacity_logit: 0.0,
            color: [0.5; 3],
        };
        GaussianScene::new(vec![g(0.1), g(0.2)], [0.0; 3])
    }

    #[test]
    fn scale_examples() {
        let scene = two_gaussians();
        let sum = scale_loss(&scene, ScaleReduction::Sum).unwrap();
        assert!((sum.value - 0.3).abs() < 1e-15);
        assert!((sum.grad[0][1] - 0.1).abs() < 1e-15);
        assert_eq!(sum.grad[0][0], 0.0);
        let mean = scale_loss(&scene, ScaleReduction::Mean).unwrap();
        assert!((mean.value - 0.15).abs() < 1e-15);
        assert!(matches!(
            scale_loss(&GaussianScene::new(vec![], [0.0; 3]), ScaleReduction::Mean),
            Err(Error::EmptyScene)
        ));
    }

    fn buffers_from(color: VectorMap, depth: ScalarMap, normal: VectorMap) -> RenderBuffers {
        let (w, h) = color.dims();
        RenderBuffers {
            color,
            depth,
            normal,
            alpha: Grid::filled(w, h, 1.0),
        }
    }

    #[test]
    fn breakdown_identity_and_skipped_terms() {
        let image = rand_vec_map(10, 8, 8);
        let depth = rand_map(11, 8, 8, 1.0, 2.0);
        let normals = rand_vec_map(12, 8, 8);
        let buffers = buffers_from(rand_vec_map(13, 8, 8), rand_map(14, 8, 8, 1.0, 2.0), rand_vec_map(15, 8, 8));
        let scene = two_gaussians();
        let weights = LossWeights::default();
        let full = LossTargets {
            image: &image,
            depth: Some(&depth),
            normals: Some(&normals),
            mask: None,
        };
        let t = total_loss_with(&buffers, &full, &scene, &weights, DepthLossKind::EdgeLogL1).unwrap();
        let b = t.breakdown;
        let expect = b.photometric + 0.2 * b.depth + b.scale + 0.1 * b.normal_l1 + 0.1 * b.normal_smooth;
        assert!((b.total - expect).abs() < 1e-10);
        assert!(b.depth > 0.0 && b.normal_l1 > 0.0);

        let bare = LossTargets {
            depth: None,
            normals: None,
            ..full
        };
        let t = total_loss_with(&buffers, &bare, &scene, &weights, DepthLossKind::EdgeLogL1).unwrap();
        assert_eq!(t.breakdown.depth, 0.0);
        assert_eq!(t.breakdown.normal_l1, 0.0);
        assert!(t.buffer_grads.depth.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn perfect_render_leaves_scale_only() {
        let image = rand_vec_map(16, 8, 8);
        let depth = rand_map(17, 8, 8, 1.0, 2.0);
        let normals = Grid::filled(8, 8, [0.0, 0.0, -1.0]);
        let buffers = buffers_from(image.clone(), depth.clone(), normals.clone());
        let targets = LossTargets {
            image: &image,
            depth: Some(&depth),
            normals: Some(&normals),
            mask: None,
        };
        let scene = two_gaussians();
        let t = total_loss_with(&buffers, &targets, &scene, &LossWeights::default(), DepthLossKind::EdgeLogL1)
            .unwrap();
        let scale = scale_loss(&scene, ScaleReduction::Mean).unwrap().value;
        assert!((t.breakdown.total - scale).abs() < 1e-12);
    }
}
