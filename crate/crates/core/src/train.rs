//! Optimization: Adam over the raw Gaussian parameters, adaptive density
//! control, and the per-frame training loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{split_train_eval, TrainFrame};
use crate::error::{Error, Result};
use crate::geometry::{init_scene_from_depths, normalize_quat, rot_from_unit_quat};
use crate::grid::ScalarMap;
use crate::losses::{total_loss_with, DepthLossKind, LossBreakdown, LossTargets, LossWeights};
use crate::metrics::{depth_metrics, psnr, ssim, DepthReport};
use crate::raster::{render_backward_with, render_with, RenderOptions, SceneGrads};
use crate::scene::{save_checkpoint, sigmoid, Camera, GaussianScene, MAX_SCALE, MIN_SCALE};
use crate::ssim::WINDOW;

/// Raw scalars per Gaussian: mean 3, quat 4, log_scale 3, opacity 1, color 3.
pub const PARAM_COUNT: usize = 14;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;
/// Scene extent is this factor times the largest camera distance from the
/// camera centroid.
pub const EXTENT_MARGIN: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub mean: f64,
    /// The mean rate decays exponentially to `mean · mean_final_factor`.
    pub mean_final_factor: f64,
    pub quat: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1.6e-4,
            mean_final_factor: 0.01,
            quat: 1e-3,
            log_scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

impl LearningRates {
    /// Per-parameter rates at iteration `iter` of `total`.
    pub fn at(&self, iter: usize, total: usize, extent: f64) -> [f64; PARAM_COUNT] {
        let t = if total > 0 { iter as f64 / total as f64 } else { 0.0 };
        let mean = self.mean * extent * self.mean_final_factor.powf(t.min(1.0));
        let mut r = [0.0; PARAM_COUNT];
        r[0..3].fill(mean);
        r[3..7].fill(self.quat);
        r[7..10].fill(self.log_scale);
        r[10] = self.opacity;
        r[11..14].fill(self.color);
        r
    }

    fn all_positive(&self) -> bool {
        [self.mean, self.quat, self.log_scale, self.opacity, self.color, self.mean_final_factor]
            .iter()
            .all(|v| *v > 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdcConfig {
    pub enabled: bool,
    pub start_iter: usize,
    /// Last iteration (exclusive) of densification; `None` is half the run.
    pub end_iter: Option<usize>,
    pub interval: usize,
    /// Threshold on the mean view-space positional gradient norm (NDC units).
    pub grad_threshold: f64,
    pub cull_opacity: f64,
    /// Children of a split get the parent's scales divided by this.
    pub split_scale_factor: f64,
    /// Gaussians larger than this fraction of the scene extent are split
    /// rather than cloned.
    pub dense_fraction: f64,
    pub min_gaussians: usize,
    pub max_gaussians: usize,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            start_iter: 500,
            end_iter: None,
            interval: 100,
            grad_threshold: 2e-4,
            cull_opacity: 5e-3,
            split_scale_factor: 1.6,
            dense_fraction: 0.01,
            min_gaussians: 16,
            max_gaussians: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub weights: LossWeights,
    pub depth_kind: DepthLossKind,
    pub lr: LearningRates,
    pub adc: AdcConfig,
    pub seed: u64,
    /// Evaluate and checkpoint every this many iterations; 0 disables.
    pub eval_every: usize,
    /// Every `holdout_every`-th frame is held out for evaluation.
    pub holdout_every: usize,
    /// Gaussians created by depth initialization.
    pub init_points: usize,
    pub background: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            weights: LossWeights::default(),
            depth_kind: DepthLossKind::default(),
            lr: LearningRates::default(),
            adc: AdcConfig::default(),
            seed: 0,
            eval_every: 1000,
            holdout_every: 10,
            init_points: 10_000,
            background: [0.0; 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !self.lr.all_positive() {
            return bad("learning rates must be positive");
        }
        let w = &self.weights;
        if ![w.depth, w.normal_l1, w.normal_smooth, w.scale].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return bad("loss weights must be finite and non-negative");
        }
        if let Some(end) = self.adc.end_iter {
            if self.adc.start_iter > end || end > self.iterations {
                return bad("densification window must satisfy start <= end <= iterations");
            }
        }
        if self.adc.interval == 0 {
            return bad("densification interval must be positive");
        }
        if self.adc.min_gaussians > self.adc.max_gaussians {
            return bad("min_gaussians exceeds max_gaussians");
        }
        if !(self.adc.split_scale_factor > 1.0) {
            return bad("split_scale_factor must exceed 1");
        }
        if self.holdout_every < 2 {
            return bad("holdout_every must be at least 2");
        }
        Ok(())
    }

    pub fn adc_end(&self) -> usize {
        self.adc.end_iter.unwrap_or(self.iterations / 2)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<[f64; PARAM_COUNT]>,
    pub v: Vec<[f64; PARAM_COUNT]>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![[0.0; PARAM_COUNT]; n],
            v: vec![[0.0; PARAM_COUNT]; n],
            step: 0,
        }
    }
}

fn pack_grads(g: &SceneGrads, i: usize) -> [f64; PARAM_COUNT] {
    let mut out = [0.0; PARAM_COUNT];
    out[0..3].copy_from_slice(&g.mean[i]);
    out[3..7].copy_from_slice(&g.quat[i]);
    out[7..10].copy_from_slice(&g.log_scale[i]);
    out[10] = g.opacity_logit[i];
    out[11..14].copy_from_slice(&g.color[i]);
    out
}

fn param_mut(g: &mut crate::scene::Gaussian, k: usize) -> &mut f64 {
    match k {
        0..=2 => &mut g.mean[k],
        3..=6 => &mut g.quat[k - 3],
        7..=9 => &mut g.log_scale[k - 7],
        10 => &mut g.opacity_logit,
        _ => &mut g.color[k - 11],
    }
}

/// Keeps parameters in their valid ranges: unit quaternions, colors in
/// [0, 1], scales within [`MIN_SCALE`, `MAX_SCALE`].
pub fn project_params(scene: &mut GaussianScene) {
    let (lo, hi) = (MIN_SCALE.ln(), MAX_SCALE.ln());
    for g in &mut scene.gaussians {
        g.quat = normalize_quat(&g.quat).unwrap_or([1.0, 0.0, 0.0, 0.0]);
        g.color = g.color.map(|c| c.clamp(0.0, 1.0));
        g.log_scale = g.log_scale.map(|s| s.clamp(lo, hi));
    }
}

/// One bias-corrected Adam update followed by [`project_params`]. Returns
/// `false`, leaving parameters and state untouched, if any gradient is
/// non-finite.
pub fn adam_step(
    scene: &mut GaussianScene,
    grads: &SceneGrads,
    state: &mut AdamState,
    lr: &[f64; PARAM_COUNT],
) -> Result<bool> {
    if grads.len() != scene.len() || state.m.len() != scene.len() {
        return Err(Error::shape(
            format!("{} Gaussians", scene.len()),
            format!("{} grads, {} state rows", grads.len(), state.m.len()),
        ));
    }
    if !grads.all_finite() {
        return Ok(false);
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for (i, g) in scene.gaussians.iter_mut().enumerate() {
        let gi = pack_grads(grads, i);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..PARAM_COUNT {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gi[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gi[k] * gi[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *param_mut(g, k) -= lr[k] * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    project_params(scene);
    Ok(true)
}

// ---------------------------------------------------------------------------
// Adaptive density control

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdcReport {
    pub culled: usize,
    pub split: usize,
    pub duplicated: usize,
}

/// Samples a point from the Gaussian's own distribution.
fn sample_from(g: &crate::scene::Gaussian, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let rot: Matrix3<f64> = normalize_quat(&g.quat)
        .map(|q| rot_from_unit_quat(&q))
        .unwrap_or_else(|_| Matrix3::identity());
    let s = g.scales();
    let mut n = || -> f64 { StandardNormal.sample(&mut *rng) };
    let z = Vector3::new(
        s[0] * n(),
        s[1] * n(),
        s[2] * n(),
    );
    let d = rot * z;
    [g.mean[0] + d.x, g.mean[1] + d.y, g.mean[2] + d.z]
}

/// Clones small and splits large Gaussians whose mean positional gradient
/// reaches the threshold, then culls nearly transparent ones. Optimizer rows
/// of new Gaussians start at zero.
pub fn adc_step(
    scene: &mut GaussianScene,
    grad_norms: &[f64],
    extent: f64,
    config: &AdcConfig,
    rng: &mut ChaCha8Rng,
    state: &mut AdamState,
) -> Result<AdcReport> {
    if grad_norms.len() != scene.len() || state.m.len() != scene.len() {
        return Err(Error::shape(
            format!("{} Gaussians", scene.len()),
            format!("{} grad norms, {} state rows", grad_norms.len(), state.m.len()),
        ));
    }
    let mut report = AdcReport::default();
    let mut budget = config.max_gaussians.saturating_sub(scene.len());
    let mut removed = vec![false; scene.len()];
    let mut born = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        if !(grad_norms[i] >= config.grad_threshold) || budget == 0 {
            continue;
        }
        if g.max_scale() <= config.dense_fraction * extent {
            let mut child = g.clone();
            child.mean = sample_from(g, rng);
            born.push(child);
            report.duplicated += 1;
        } else {
            let shrink = config.split_scale_factor.ln();
            for _ in 0..2 {
                let mut child = g.clone();
                child.mean = sample_from(g, rng);
                child.log_scale = g.log_scale.map(|s| s - shrink);
                born.push(child);
            }
            removed[i] = true;
            report.split += 1;
        }
        budget -= 1;
    }

    let mut next: Vec<(crate::scene::Gaussian, Option<usize>)> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed[*i])
        .map(|(i, g)| (g.clone(), Some(i)))
        .collect();
    next.extend(born.into_iter().map(|g| (g, None)));

    let mut low: Vec<usize> = (0..next.len())
        .filter(|&j| next[j].0.opacity() < config.cull_opacity)
        .collect();
    low.sort_by(|&a, &b| next[a].0.opacity().total_cmp(&next[b].0.opacity()).then(a.cmp(&b)));
    low.truncate(next.len().saturating_sub(config.min_gaussians));
    let mut cull = vec![false; next.len()];
    for j in low {
        cull[j] = true;
    }
    report.culled = cull.iter().filter(|c| **c).count();

    let mut m = Vec::with_capacity(next.len());
    let mut v = Vec::with_capacity(next.len());
    let mut gaussians = Vec::with_capacity(next.len());
    for (j, (g, origin)) in next.into_iter().enumerate() {
        if cull[j] {
            continue;
        }
        match origin {
            Some(i) => {
                m.push(state.m[i]);
                v.push(state.v[i]);
            }
            None => {
                m.push([0.0; PARAM_COUNT]);
                v.push([0.0; PARAM_COUNT]);
            }
        }
        gaussians.push(g);
    }
    scene.gaussians = gaussians;
    state.m = m;
    state.v = v;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Training loop

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub psnr: f64,
    /// `None` when the images are smaller than the SSIM window.
    pub ssim: Option<f64>,
    /// Averaged over frames with depth supervision.
    pub depth: Option<DepthReport>,
    pub mean_abs_depth_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Iteration {
        iter: usize,
        frame_id: String,
        loss: LossBreakdown,
        gaussians: usize,
        elapsed_s: f64,
        /// The optimizer rejected the step because of non-finite gradients.
        rejected: bool,
    },
    Densify {
        iter: usize,
        report: AdcReport,
        gaussians: usize,
    },
    Eval {
        iter: usize,
        summary: EvalSummary,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub events: Vec<LogEvent>,
}

impl TrainLog {
    pub fn iterations(&self) -> impl Iterator<Item = (usize, &LossBreakdown)> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Iteration { iter, loss, .. } => Some((*iter, loss)),
            _ => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = (usize, &EvalSummary)> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Eval { iter, summary } => Some((*iter, summary)),
            _ => None,
        })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `EXTENT_MARGIN` times the largest camera distance from the camera
/// centroid (1 for a single camera).
pub fn scene_extent(cameras: &[&Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let centroid = cameras.iter().map(|c| c.position()).sum::<Vector3<f64>>() / cameras.len() as f64;
    let r = cameras
        .iter()
        .map(|c| (c.position() - centroid).norm())
        .fold(0.0, f64::max);
    if r > 0.0 {
        EXTENT_MARGIN * r
    } else {
        1.0
    }
}

/// Renders each frame and compares against its image and depth target.
pub fn evaluate(scene: &GaussianScene, frames: &[TrainFrame]) -> Result<EvalSummary> {
    let opts = RenderOptions::default();
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut ssim_ok = true;
    let mut depth_reports = Vec::new();
    let mut mae = Vec::new();
    for f in frames {
        let b = render_with(scene, &f.camera, &opts)?;
        psnr_sum += psnr(&b.color, &f.image)?;
        if f.image.width() >= WINDOW && f.image.height() >= WINDOW {
            ssim_sum += ssim(&b.color, &f.image)?;
        } else {
            ssim_ok = false;
        }
        if let Some(gt) = f.depth_target() {
            if let Ok(r) = depth_metrics(&b.depth, &gt, None) {
                mae.push(mean_abs_error(&b.depth, &gt));
                depth_reports.push(r);
            }
        }
    }
    let n = frames.len().max(1) as f64;
    let depth = (!depth_reports.is_empty()).then(|| average_reports(&depth_reports));
    Ok(EvalSummary {
        frames: frames.len(),
        psnr: psnr_sum / n,
        ssim: (ssim_ok && !frames.is_empty()).then_some(ssim_sum / n),
        depth,
        mean_abs_depth_error: (!mae.is_empty()).then(|| mae.iter().sum::<f64>() / mae.len() as f64),
    })
}

/// Mean `|pred − gt|` over pixels with `gt > 0`.
pub fn mean_abs_error(pred: &ScalarMap, gt: &ScalarMap) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (p, g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if *g > 0.0 && g.is_finite() {
            s += (p - g).abs();
            n += 1;
        }
    }
    s / n.max(1) as f64
}

fn average_reports(r: &[DepthReport]) -> DepthReport {
    let n = r.len() as f64;
    let avg = |f: fn(&DepthReport) -> f64| r.iter().map(f).sum::<f64>() / n;
    DepthReport {
        abs_rel: avg(|d| d.abs_rel),
        sq_rel: avg(|d| d.sq_rel),
        rmse: avg(|d| d.rmse),
        rmse_log: avg(|d| d.rmse_log),
        delta1: avg(|d| d.delta1),
        delta2: avg(|d| d.delta2),
        delta3: avg(|d| d.delta3),
        valid_count: r.iter().map(|d| d.valid_count).sum(),
        log_skipped: r.iter().map(|d| d.log_skipped).sum(),
    }
}

/// Optional inputs and outputs of [`train_with`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Starting scene; required when no frame has depth.
    pub init: Option<GaussianScene>,
    /// Frames to evaluate on. `None` holds out every
    /// `config.holdout_every`-th input frame.
    pub eval_frames: Option<Vec<TrainFrame>>,
    /// Where periodic checkpoints are written.
    pub checkpoint_dir: Option<PathBuf>,
    /// Called with every log event as it happens.
    pub on_event: Option<&'a mut dyn FnMut(&LogEvent)>,
}

pub fn train(frames: &[TrainFrame], config: &TrainConfig) -> Result<(GaussianScene, TrainLog)> {
    train_with(frames, config, TrainOptions::default())
}

struct PreparedFrame<'a> {
    frame: &'a TrainFrame,
    depth: Option<ScalarMap>,
}

pub fn checkpoint_path(dir: &Path, iter: usize) -> PathBuf {
    dir.join(format!("ckpt_{iter:06}.bin"))
}

pub fn train_with(
    frames: &[TrainFrame],
    config: &TrainConfig,
    mut opts: TrainOptions<'_>,
) -> Result<(GaussianScene, TrainLog)> {
    config.validate()?;
    if frames.len() < 2 {
        return Err(Error::Dataset(format!("need at least 2 frames, got {}", frames.len())));
    }
    let (train_frames, eval_frames) = match opts.eval_frames.take() {
        Some(eval) => (frames.to_vec(), eval),
        None => {
            let split = split_train_eval(frames.to_vec(), config.holdout_every)?;
            (split.train, split.eval)
        }
    };
    let mut scene = match opts.init.take() {
        Some(s) => s,
        None => init_scene_from_depths(&train_frames, config.init_points, config.seed)?,
    };
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    scene.background = config.background;
    project_params(&mut scene);

    let prepared: Vec<PreparedFrame> = train_frames
        .iter()
        .map(|frame| PreparedFrame {
            frame,
            depth: frame.depth_target(),
        })
        .collect();
    let extent = scene_extent(&train_frames.iter().map(|f| &f.camera).collect::<Vec<_>>());
    let render_opts = RenderOptions::default();
    let mut state = AdamState::new(scene.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adc_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xADC0_ADC0);
    let mut order: Vec<usize> = Vec::new();
    let mut accum = vec![0.0; scene.len()];
    let mut seen = vec![0usize; scene.len()];
    let adc_end = config.adc_end();
    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut emit = |log: &mut TrainLog, e: LogEvent| {
        if let Some(cb) = opts.on_event.as_mut() {
            cb(&e);
        }
        log.events.push(e);
    };
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for iter in 0..config.iterations {
        if order.is_empty() {
            order = (0..prepared.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let pf = &prepared[order.pop().expect("refilled above")];
        let cam = &pf.frame.camera;
        let buffers = render_with(&scene, cam, &render_opts)?;
        let targets = LossTargets {
            image: &pf.frame.image,
            depth: pf.depth.as_ref(),
            normals: pf.frame.normal_prior.as_ref(),
            mask: None,
        };
        let loss = total_loss_with(&buffers, &targets, &scene, &config.weights, config.depth_kind)?;
        if !loss.breakdown.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {iter}")));
        }
        let mut grads = render_backward_with(&scene, cam, &buffers, &loss.buffer_grads, &render_opts)?;
        for (g, s) in grads.log_scale.iter_mut().zip(&loss.log_scale_grads) {
            for k in 0..3 {
                g[k] += s[k];
            }
        }

        let densifying = config.adc.enabled && iter < adc_end;
        if densifying {
            let (hw, hh) = (cam.width as f64 / 2.0, cam.height as f64 / 2.0);
            for (i, (g, vis)) in grads.mean2d.iter().zip(&grads.visible).enumerate() {
                if *vis {
                    accum[i] += (g[0] * hw).hypot(g[1] * hh);
                    seen[i] += 1;
                }
            }
        }

        let lr = config.lr.at(iter, config.iterations, extent);
        let applied = adam_step(&mut scene, &grads, &mut state, &lr)?;
        emit(
            &mut log,
            LogEvent::Iteration {
                iter,
                frame_id: pf.frame.frame_id.clone(),
                loss: loss.breakdown,
                gaussians: scene.len(),
                elapsed_s: start.elapsed().as_secs_f64(),
                rejected: !applied,
            },
        );

        let step = iter + 1;
        if densifying && step >= config.adc.start_iter && step % config.adc.interval == 0 {
            let norms: Vec<f64> = accum
                .iter()
                .zip(&seen)
                .map(|(a, &n)| if n > 0 { a / n as f64 } else { 0.0 })
                .collect();
            let report = adc_step(&mut scene, &norms, extent, &config.adc, &mut adc_rng, &mut state)?;
            accum = vec![0.0; scene.len()];
            seen = vec![0; scene.len()];
            emit(
                &mut log,
                LogEvent::Densify {
                    iter,
                    report,
                    gaussians: scene.len(),
                },
            );
        }

        if config.eval_every > 0 && step % config.eval_every == 0 {
            if !eval_frames.is_empty() {
                let summary = evaluate(&scene, &eval_frames)?;
                emit(&mut log, LogEvent::Eval { iter: step, summary });
            }
            if let Some(dir) = &opts.checkpoint_dir {
                save_checkpoint(&scene, checkpoint_path(dir, step))?;
            }
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        save_checkpoint(&scene, dir.join("final.bin"))?;
    }
    Ok((scene, log))
}

/// Mean opacity of the scene; handy for logging.
pub fn mean_opacity(scene: &GaussianScene) -> f64 {
    scene.gaussians.iter().map(|g| sigmoid(g.opacity_logit)).sum::<f64>() / scene.len().max(1) as f64
}
