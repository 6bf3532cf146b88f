//! `dnsplat` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dnsplat::align::{apply_alignment, collect_pairs, fit_scale_shift, write_alignment_cache, AlignmentRecord};
use dnsplat::dataset::{load_dataset_with, split_train_eval, LoadOptions, TrainFrame, ALIGNMENT_FILE};
use dnsplat::kdtree::Norm;
use dnsplat::losses::{DepthLossKind, ScaleReduction};
use dnsplat::metrics::{mesh_metrics, sample_mesh, ImageReport, DEFAULT_TAU};
use dnsplat::pointset::{extract_oriented_points, read_mesh, read_ply, write_ply};
use dnsplat::raster::{render, write_alpha_png, write_color_png, write_depth_png, write_normal_png};
use dnsplat::scene::{load_checkpoint, validate_scene};
use dnsplat::synth::{make_dataset, BoxScene, DepthNoise, SynthOptions};
use dnsplat::train::{evaluate, train_with, LogEvent, TrainConfig, TrainOptions};
use dnsplat::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "dnsplat", version, about = "Depth- and normal-regularized Gaussian splatting")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Print a single JSON document on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads (falls back to DNSPLAT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic box-room dataset.
    Synth(SynthArgs),
    /// Optimize a scene on a dataset.
    Train(TrainArgs),
    /// Render held-out frames of a checkpoint to PNGs.
    Render(RenderArgs),
    /// Fit per-frame mono depth scale/shift against sparse depth.
    Align(AlignArgs),
    /// Export an oriented point set for surface reconstruction.
    ExtractPoints(ExtractArgs),
    /// Depth metrics of a checkpoint on held-out frames.
    EvalDepth(EvalArgs),
    /// Mesh or point-cloud reconstruction metrics.
    EvalMesh(EvalMeshArgs),
    /// PSNR and SSIM of a checkpoint on held-out frames.
    EvalNvs(EvalArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root.
    #[arg(long)]
    data: PathBuf,
    /// Poses use the OpenGL camera convention.
    #[arg(long)]
    ogl_pose: bool,
    /// Every N-th frame is held out for evaluation.
    #[arg(long, default_value_t = 10)]
    holdout_every: usize,
}

impl DataArgs {
    fn load(&self) -> dnsplat::Result<Vec<TrainFrame>> {
        load_dataset_with(&self.data, LoadOptions { ogl_pose: self.ogl_pose })
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 40.0)]
    focal: f64,
    /// Additive depth noise (m).
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Relative depth noise near edges.
    #[arg(long, default_value_t = 0.0)]
    edge_sigma: f64,
    #[arg(long, default_value_t = 1)]
    edge_radius: usize,
    /// Also write monocular depth.
    #[arg(long)]
    mono: bool,
    /// Fraction of pixels in the sparse depth maps.
    #[arg(long, default_value_t = 0.0)]
    sparse_fraction: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting checkpoint (required when the dataset has no depth).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_parser = PossibleValuesParser::new(DepthLossKind::ALL.map(|k| k.name())))]
    depth_loss: Option<String>,
    #[arg(long)]
    lambda_depth: Option<f64>,
    #[arg(long)]
    lambda_normal: Option<f64>,
    #[arg(long)]
    lambda_smooth: Option<f64>,
    #[arg(long)]
    lambda_scale: Option<f64>,
    #[arg(long, value_parser = ["mean", "sum"])]
    scale_reduction: Option<String>,
    #[arg(long)]
    init_points: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    no_densify: bool,
    #[arg(long)]
    densify_start: Option<usize>,
    #[arg(long)]
    densify_end: Option<usize>,
    #[arg(long)]
    densify_interval: Option<usize>,
    #[arg(long)]
    grad_threshold: Option<f64>,
    #[arg(long)]
    max_gaussians: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Render every frame, not only held-out ones.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct AlignArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    points: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Args)]
struct EvalMeshArgs {
    /// Predicted mesh (PLY/OBJ) or oriented point cloud (PLY).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Points sampled from each mesh.
    #[arg(long, default_value_t = 2_000_000)]
    samples: usize,
    #[arg(long, value_parser = ["l1", "l2"], default_value = "l1")]
    mesh_norm: String,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) => EXIT_USAGE,
            Error::NonFinite(_) | Error::DegenerateCovariance { .. } => EXIT_NUMERIC,
            Error::Io { .. } => EXIT_IO,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type Outcome = Result<(Value, String), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json = cli.json;
    let result = configure_threads(cli.threads).and_then(|_| run(cli));
    match result {
        Ok((value, text)) => {
            if json {
                println!("{value}");
            } else if !text.is_empty() {
                println!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            if json {
                println!("{}", json!({"error": f.message, "code": f.code}));
            }
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), Failure> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("DNSPLAT_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| usage(format!("DNSPLAT_THREADS={v} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(usage("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => synth(a, seed),
        Command::Train(a) => train(a, seed, cli.json),
        Command::Render(a) => render_frames(a),
        Command::Align(a) => align(a),
        Command::ExtractPoints(a) => extract(a, seed),
        Command::EvalDepth(a) => eval_depth(a),
        Command::EvalMesh(a) => eval_mesh(a, seed),
        Command::EvalNvs(a) => eval_nvs(a),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("values serialize")
}

fn synth(a: SynthArgs, seed: u64) -> Outcome {
    let scene = BoxScene {
        width: a.width,
        height: a.height,
        focal: a.focal,
        ..BoxScene::default()
    };
    let opts = SynthOptions {
        noise: DepthNoise {
            sigma: a.noise_sigma,
            edge_sigma: a.edge_sigma,
            edge_radius: a.edge_radius,
        },
        mono: a.mono,
        sparse_fraction: a.sparse_fraction,
    };
    let frames = make_dataset(&scene, &a.out, a.views, seed, &opts)?;
    let v = json!({"out": a.out, "frames": frames.len()});
    let text = format!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok((v, text))
}

fn build_config(a: &TrainArgs, seed: u64) -> Result<TrainConfig, Failure> {
    let mut c = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure {
                code: EXIT_IO,
                message: format!("{}: {e}", p.display()),
            })?;
            serde_json::from_str::<TrainConfig>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    c.seed = seed;
    c.holdout_every = a.data.holdout_every;
    if let Some(v) = a.iterations {
        c.iterations = v;
    }
    if let Some(k) = &a.depth_loss {
        c.depth_kind = k.parse().map_err(|e: Error| usage(e.to_string()))?;
    }
    if let Some(v) = a.lambda_depth {
        c.weights.depth = v;
    }
    if let Some(v) = a.lambda_normal {
        c.weights.normal_l1 = v;
    }
    if let Some(v) = a.lambda_smooth {
        c.weights.normal_smooth = v;
    }
    if let Some(v) = a.lambda_scale {
        c.weights.scale = v;
    }
    if let Some(r) = &a.scale_reduction {
        c.weights.scale_reduction = if r == "sum" { ScaleReduction::Sum } else { ScaleReduction::Mean };
    }
    if let Some(v) = a.init_points {
        c.init_points = v;
    }
    if let Some(v) = a.eval_every {
        c.eval_every = v;
    }
    if a.no_densify {
        c.adc.enabled = false;
    }
    if let Some(v) = a.densify_start {
        c.adc.start_iter = v;
    }
    if let Some(v) = a.densify_end {
        c.adc.end_iter = Some(v);
    }
    if let Some(v) = a.densify_interval {
        c.adc.interval = v;
    }
    if let Some(v) = a.grad_threshold {
        c.adc.grad_threshold = v;
    }
    if let Some(v) = a.max_gaussians {
        c.adc.max_gaussians = v;
    }
    c.validate()?;
    Ok(c)
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

fn train(a: TrainArgs, seed: u64, json_out: bool) -> Outcome {
    let config = build_config(&a, seed)?;
    let frames = a.data.load()?;
    let init = a.init.as_ref().map(load_checkpoint).transpose()?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    std::fs::write(a.out.join("config.json"), pretty(&to_value(&config)))
        .map_err(|e| io_failure(&a.out, e))?;
    let mut progress = |e: &LogEvent| {
        if json_out {
            return;
        }
        match e {
            LogEvent::Eval { iter, summary } => {
                eprintln!("iter {iter}: held-out psnr {:.2} dB", summary.psnr)
            }
            LogEvent::Densify { iter, report, gaussians } => eprintln!(
                "iter {iter}: densify +{} split, +{} cloned, -{} culled -> {gaussians}",
                report.split, report.duplicated, report.culled
            ),
            LogEvent::Iteration { .. } => {}
        }
    };
    let (scene, log) = train_with(
        &frames,
        &config,
        TrainOptions {
            init,
            checkpoint_dir: Some(a.out.clone()),
            on_event: Some(&mut progress),
            ..Default::default()
        },
    )?;
    log.write_jsonl(a.out.join("log.jsonl"))?;
    let report = validate_scene(&scene);
    if !report.is_valid() {
        return Err(Failure {
            code: EXIT_NUMERIC,
            message: format!("trained scene is invalid: {:?}", report.violations),
        });
    }
    let last = log.evals().last().map(|(i, s)| json!({"iter": i, "summary": to_value(s)}));
    let v = json!({
        "out": a.out,
        "gaussians": scene.len(),
        "iterations": config.iterations,
        "last_eval": last,
    });
    let text = format!("trained {} iterations, {} Gaussians, outputs in {}", config.iterations, scene.len(), a.out.display());
    Ok((v, text))
}

fn eval_frames(data: &DataArgs, all: bool) -> Result<Vec<TrainFrame>, Failure> {
    let frames = data.load()?;
    if all {
        return Ok(frames);
    }
    let split = split_train_eval(frames, data.holdout_every)?;
    if split.eval.is_empty() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!("fewer than {} frames; nothing is held out", data.holdout_every),
        });
    }
    Ok(split.eval)
}

fn render_frames(a: RenderArgs) -> Outcome {
    let scene = load_checkpoint(&a.ckpt)?;
    let frames = eval_frames(&a.data, a.all)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    for f in &frames {
        let b = render(&scene, &f.camera)?;
        let p = |kind: &str| a.out.join(format!("{}_{kind}.png", f.frame_id));
        write_color_png(&b.color, p("color"))?;
        write_depth_png(&b.depth, p("depth"))?;
        write_normal_png(&b.normalized_normals(), p("normal"))?;
        write_alpha_png(&b.alpha, p("alpha"))?;
    }
    let ids: Vec<&str> = frames.iter().map(|f| f.frame_id.as_str()).collect();
    let text = format!("rendered {} frames to {}", frames.len(), a.out.display());
    Ok((json!({"out": a.out, "frames": ids}), text))
}

fn align(a: AlignArgs) -> Outcome {
    let frames = a.data.load()?;
    let mut records = Vec::new();
    for f in &frames {
        let (Some(mono), Some(sparse)) = (&f.mono_depth, &f.sparse_depth) else {
            continue;
        };
        let (a_, b_) = fit_scale_shift(&collect_pairs(mono, sparse)?)?;
        let (_, clamped) = apply_alignment(mono, a_, b_);
        records.push(AlignmentRecord {
            frame_id: f.frame_id.clone(),
            a: a_,
            b: b_,
            clamped,
        });
    }
    if records.is_empty() {
        return Err(Failure {
            code: EXIT_DATA,
            message: "no frame has both mono_depth and sparse_depth".into(),
        });
    }
    let path = a.data.data.join(ALIGNMENT_FILE);
    write_alignment_cache(&records, &path)?;
    let rows: Vec<Value> = records
        .iter()
        .map(|r| json!({"frame_id": r.frame_id, "a": r.a, "b": r.b, "clamped": r.clamped}))
        .collect();
    let text = format!("aligned {} frames, wrote {}", records.len(), path.display());
    Ok((json!({"cache": path, "frames": rows}), text))
}

fn extract(a: ExtractArgs, seed: u64) -> Outcome {
    let scene = load_checkpoint(&a.ckpt)?;
    let split = split_train_eval(a.data.load()?, a.data.holdout_every)?;
    let cameras: Vec<_> = split.train.iter().map(|f| f.camera.clone()).collect();
    let cloud = extract_oriented_points(&scene, &cameras, a.points, seed)?;
    write_ply(&cloud, &a.out)?;
    let text = format!("wrote {} points to {}", cloud.len(), a.out.display());
    Ok((json!({"out": a.out, "points": cloud.len()}), text))
}

fn eval_depth(a: EvalArgs) -> Outcome {
    let scene = load_checkpoint(&a.ckpt)?;
    let frames = eval_frames(&a.data, false)?;
    let summary = evaluate(&scene, &frames)?;
    let Some(depth) = summary.depth else {
        return Err(Failure {
            code: EXIT_DATA,
            message: "held-out frames carry no depth".into(),
        });
    };
    let v = to_value(&depth);
    Ok((v.clone(), pretty(&v)))
}

fn eval_nvs(a: EvalArgs) -> Outcome {
    let scene = load_checkpoint(&a.ckpt)?;
    let frames = eval_frames(&a.data, false)?;
    let summary = evaluate(&scene, &frames)?;
    let Some(ssim) = summary.ssim else {
        return Err(Failure {
            code: EXIT_DATA,
            message: "images are smaller than the SSIM window".into(),
        });
    };
    let v = to_value(&ImageReport {
        psnr: summary.psnr,
        ssim,
    });
    Ok((v.clone(), pretty(&v)))
}

/// Samples a mesh, or reads the file as a point cloud when it has no faces.
fn points_of(path: &Path, samples: usize, seed: u64) -> dnsplat::Result<dnsplat::geometry::OrientedPointCloud> {
    match read_mesh(path) {
        Ok(mesh) => sample_mesh(&mesh, samples, seed),
        Err(Error::NoFaces) => read_ply(path),
        Err(e) => Err(e),
    }
}

fn eval_mesh(a: EvalMeshArgs, seed: u64) -> Outcome {
    if !(a.tau > 0.0) {
        return Err(usage("tau must be positive"));
    }
    let pred = points_of(&a.pred, a.samples, seed)?;
    let gt = points_of(&a.gt, a.samples, seed)?;
    let norm = if a.mesh_norm == "l2" { Norm::L2 } else { Norm::L1 };
    let report = mesh_metrics(&pred, &gt, a.tau, norm)?;
    let v = to_value(&report);
    Ok((v.clone(), pretty(&v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_exit_codes() {
        let io = Error::Io {
            path: "x".into(),
            source: std::io::Error::other("boom"),
        };
        let cases = [
            (Error::InvalidArgument("x".into()), EXIT_USAGE),
            (Error::Dataset("x".into()), EXIT_DATA),
            (Error::EmptyCloud, EXIT_DATA),
            (Error::NonFinite("loss".into()), EXIT_NUMERIC),
            (io, EXIT_IO),
        ];
        for (e, code) in cases {
            assert_eq!(Failure::from(e).code, code);
        }
    }
}
