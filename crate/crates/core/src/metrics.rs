//! Image, depth and point-cloud evaluation.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OrientedPointCloud;
use crate::grid::{Grid, ScalarMap, VectorMap};
use crate::kdtree::{KdTree, Neighbor, Norm};
use crate::pointset::TriangleMesh;
use crate::ssim::{ssim_channel, WINDOW};

/// Reported instead of +∞ when prediction and ground truth are identical.
pub const PSNR_IDENTICAL: f64 = 99.0;
/// Default F-score distance threshold in meters.
pub const DEFAULT_TAU: f64 = 0.05;

pub fn psnr(pred: &VectorMap, gt: &VectorMap) -> Result<f64> {
    pred.ensure_same_dims(gt)?;
    let mut sum = 0.0;
    for (p, g) in pred.as_slice().iter().zip(gt.as_slice()) {
        for c in 0..3 {
            sum += (p[c] - g[c]).powi(2);
        }
    }
    let mse = sum / (3 * pred.len()) as f64;
    Ok(if mse == 0.0 {
        PSNR_IDENTICAL
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03),
/// averaged over the three channels.
pub fn ssim(pred: &VectorMap, gt: &VectorMap) -> Result<f64> {
    pred.ensure_same_dims(gt)?;
    let (w, h) = pred.dims();
    if w < WINDOW || h < WINDOW {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min_width: WINDOW,
            min_height: WINDOW,
        });
    }
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = pred.as_slice().iter().map(|v| v[c]).collect();
        let y: Vec<f64> = gt.as_slice().iter().map(|v| v[c]).collect();
        total += ssim_channel(&x, &y, w, h, None, false)?.mean;
    }
    Ok(total / 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    /// NaN when every valid pixel has a non-positive prediction.
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub valid_count: usize,
    /// Valid pixels left out of `rmse_log` because the prediction is ≤ 0.
    pub log_skipped: usize,
}

/// Standard depth errors over pixels with finite `gt > 0` that the mask
/// keeps. Non-positive predictions fail every δ threshold.
pub fn depth_metrics(
    pred: &ScalarMap,
    gt: &ScalarMap,
    mask: Option<&Grid<bool>>,
) -> Result<DepthReport> {
    pred.ensure_same_dims(gt)?;
    let valid = crate::losses::depth_validity(gt, mask)?;
    let mut n = 0usize;
    let (mut abs_rel, mut sq_rel, mut se) = (0.0, 0.0, 0.0);
    let (mut log_se, mut log_n) = (0.0, 0usize);
    let mut hits = [0usize; 3];
    for ((&p, &g), &ok) in pred.as_slice().iter().zip(gt.as_slice()).zip(valid.as_slice()) {
        if !ok {
            continue;
        }
        n += 1;
        let d = p - g;
        abs_rel += d.abs() / g;
        sq_rel += d * d / g;
        se += d * d;
        if p > 0.0 {
            log_se += (p.ln() - g.ln()).powi(2);
            log_n += 1;
            let ratio = (p / g).max(g / p);
            for (k, t) in [1.25f64, 1.25 * 1.25, 1.25 * 1.25 * 1.25].iter().enumerate() {
                if ratio < *t {
                    hits[k] += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let nf = n as f64;
    Ok(DepthReport {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (se / nf).sqrt(),
        rmse_log: if log_n > 0 {
            (log_se / log_n as f64).sqrt()
        } else {
            f64::NAN
        },
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
        valid_count: n,
        log_skipped: n - log_n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshReport {
    pub accuracy: f64,
    pub completion: f64,
    pub chamfer_l1: f64,
    pub normal_consistency: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub tau: f64,
}

fn nearest_all(tree: &KdTree, queries: &[[f64; 3]]) -> Vec<Neighbor> {
    queries
        .par_iter()
        .map(|q| tree.nearest(q).expect("tree is non-empty"))
        .collect()
}

fn abs_dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs()
}

/// Bidirectional nearest-neighbor reconstruction metrics of `pred` against
/// `gt` under `norm`. Distances below `tau` count as matches.
pub fn mesh_metrics(
    pred: &OrientedPointCloud,
    gt: &OrientedPointCloud,
    tau: f64,
    norm: Norm,
) -> Result<MeshReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    for c in [pred, gt] {
        if c.normals.len() != c.len() {
            return Err(Error::shape(
                format!("{} normals", c.len()),
                format!("{} normals", c.normals.len()),
            ));
        }
    }
    let gt_tree = KdTree::new(&gt.positions, norm);
    let pred_tree = KdTree::new(&pred.positions, norm);
    let to_gt = nearest_all(&gt_tree, &pred.positions);
    let to_pred = nearest_all(&pred_tree, &gt.positions);

    let mean = |v: &[Neighbor], f: &dyn Fn(usize, &Neighbor) -> f64| {
        v.iter().enumerate().map(|(i, n)| f(i, n)).sum::<f64>() / v.len() as f64
    };
    let accuracy = mean(&to_gt, &|_, n| n.distance);
    let completion = mean(&to_pred, &|_, n| n.distance);
    let normal_acc = mean(&to_gt, &|i, n| abs_dot(&pred.normals[i], &gt.normals[n.index]));
    let normal_comp = mean(&to_pred, &|i, n| abs_dot(&gt.normals[i], &pred.normals[n.index]));
    let precision = mean(&to_gt, &|_, n| if n.distance < tau { 1.0 } else { 0.0 });
    let recall = mean(&to_pred, &|_, n| if n.distance < tau { 1.0 } else { 0.0 });
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MeshReport {
        accuracy,
        completion,
        chamfer_l1: (accuracy + completion) / 2.0,
        normal_consistency: (normal_acc + normal_comp) / 2.0,
        precision,
        recall,
        f_score,
        tau,
    })
}

/// `n` area-weighted uniform samples on the mesh surface with face normals.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<OrientedPointCloud> {
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|i| mesh.face_area(i)).collect();
    let picker = WeightedIndex::new(&areas).map_err(|_| Error::DegenerateMesh)?;
    let normals: Vec<[f64; 3]> = (0..mesh.faces.len()).map(|i| mesh.face_normal(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = OrientedPointCloud::default();
    for _ in 0..n {
        let f = picker.sample(&mut rng);
        let [a, b, c] = mesh.faces[f].map(|k| mesh.vertices[k]);
        let r1: f64 = rng.gen::<f64>().sqrt();
        let r2: f64 = rng.gen();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        cloud
            .positions
            .push(std::array::from_fn(|k| wa * a[k] + wb * b[k] + wc * c[k]));
        cloud.normals.push(normals[f]);
    }
    Ok(cloud)
}
