//! The `ngs` command line.
//!
//! Machine-readable results go to stdout as JSON (or to JSON-lines files);
//! progress and diagnostics go to stderr. Exit codes: 0 success, 1 usage or
//! data error, 2 numerical abort.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autograd::Fault;
use crate::config::{apply_overrides, load_config, to_flat};
use crate::densify::Strategy;
use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};
use crate::gradcheck::{convergence_table, run_gradcheck_with_fault, GradcheckConfig, DEFAULT_H, GROUPS};
use crate::loss::{psnr, ssim, LossConfig};
use crate::primitive::{flatten_params, SplatPrimitive};
use crate::render::{render, RenderOptions};
use crate::spectral::freq_error_map;
use crate::scene_io::{
    heatmap, load_checkpoint, load_dataset, meta_path, save_checkpoint, synthesize, save_dataset, write_atomic, write_ngsf, write_png, CheckpointMeta,
    Dataset, Pattern, SynthSpec, View,
};
use crate::train::{init_scene, mean_psnr, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "NGS_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ngs", version, about = "Neural Gabor splatting on the CPU")]
struct Cli {
    /// Worker threads (default: NGS_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a scene and write checkpoints and logs.
    Train(TrainArgs),
    /// Render one camera from a checkpoint.
    Render(RenderArgs),
    /// PSNR and SSIM of a checkpoint against a dataset split.
    Eval(EvalArgs),
    /// Write a procedural dataset.
    Synth(SynthArgs),
    /// Compare analytic gradients with finite differences on a random scene.
    Gradcheck(GradcheckArgs),
    /// Summarize a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory with transforms.json.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Color head: siren or sh.
    #[arg(long)]
    head: Option<String>,
    /// Drop the view direction from the SIREN input.
    #[arg(long)]
    no_view_dep: bool,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    max_primitives: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Extra `key=value` config overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// After each densification round, write the per-band error maps of
    /// the first training view as PNG heatmaps under `debug_bands/`.
    #[arg(long)]
    debug_bands: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Camera index into the dataset, or a JSON camera.
    #[arg(long)]
    camera: String,
    /// Dataset for camera indices; defaults to the cameras saved by `train`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output image, `.png` or `.ngsf`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// test, train or all.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// checkerboard, stripes, two-region or texture-file:PATH.
    #[arg(long, default_value = "checkerboard")]
    pattern: Pattern,
    #[arg(long, default_value_t = 8.0)]
    cell_px: f64,
    #[arg(long, default_value_t = 64)]
    image_size: u32,
    #[arg(long, default_value_t = 1)]
    n_views: usize,
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    #[arg(long, default_value_t = 40.0)]
    arc_degrees: f64,
    #[arg(long, default_value_t = 64)]
    n_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..=8))]
    n_primitives: u32,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=8))]
    image_size: u32,
    #[arg(long, default_value_t = DEFAULT_H)]
    h: f64,
    /// Step sizes for the convergence table.
    #[arg(long, value_delimiter = ',', default_value = "1e-3,5e-4,2.5e-4")]
    sweep: Vec<f64>,
    #[arg(long, hide = true)]
    fault: Option<String>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli.threads.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|s| s.parse().ok()));
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Error::Config(e.to_string())),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
                _ => EXIT_ERROR,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn emit(v: &Value) {
    println!("{v}");
}

fn write_jsonl(w: &mut impl Write, path: &Path, v: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(v).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

fn training_views(ds: &Dataset) -> Vec<&View> {
    if ds.train.is_empty() {
        ds.views.iter().collect()
    } else {
        ds.train_views()
    }
}

fn checkpoint_meta(cfg: &TrainConfig, iteration: usize, ds: &Dataset) -> Result<CheckpointMeta> {
    let (w, h) = ds.views.first().map(|v| (v.camera.width, v.camera.height)).unwrap_or((0, 0));
    let echo = json!({
        "train": cfg,
        "data": {"width": w, "height": h},
    });
    Ok(CheckpointMeta::new(cfg.init.head_kind()?, cfg.init.omega0, iteration, echo))
}

/// Cameras written next to the training outputs so `render` can use indices.
pub const CAMERAS_FILE: &str = "cameras.json";
pub const FINAL_CHECKPOINT: &str = "final.ply";

fn cmd_train(a: TrainArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| pairs.push((k.to_string(), v));
    if let Some(s) = a.seed {
        put("seed", s.to_string());
    }
    if let Some(s) = a.strategy {
        put("densify.strategy", s.to_string());
    }
    if let Some(h) = &a.head {
        put("init.head", h.clone());
    }
    if a.no_view_dep {
        put("init.d_in", "2".into());
    }
    if let Some(h) = a.hidden {
        put("init.hidden", h.to_string());
    }
    if let Some(m) = a.max_primitives {
        put("densify.max_primitives", m.to_string());
    }
    if let Some(n) = a.iterations {
        put("iterations", n.to_string());
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        put(k.trim(), v.trim().to_string());
    }
    let cfg = apply_overrides(&base, &pairs)?;

    let ds = load_dataset(&a.data)?;
    let out = &a.out;
    fs::create_dir_all(out.join("checkpoints")).map_err(|e| Error::io(out, e))?;
    let cams = serde_json::to_string_pretty(&ds.cameras()).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&out.join(CAMERAS_FILE), |f| f.write_all(cams.as_bytes()).map_err(|e| Error::io(out, e)))?;
    write_atomic(&out.join("config.txt"), |f| f.write_all(to_flat(&cfg).as_bytes()).map_err(|e| Error::io(out, e)))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prims = init_scene(&ds.initial_points, &cfg.init, &mut rng)?;
    let mut trainer = Trainer::new(prims, training_views(&ds), cfg.clone(), rng)?;
    let metrics_path = out.join("metrics.jsonl");
    let densify_path = out.join("densify.jsonl");
    let open = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| Error::io(p, e));
    let (mut metrics, mut densify) = (open(&metrics_path)?, open(&densify_path)?);
    eprintln!("training {} primitives on {} views for {} iterations", trainer.primitives.len(), trainer.views.len(), cfg.iterations);

    while !trainer.done() {
        let report = match trainer.step() {
            Ok(r) => r,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
                let meta = checkpoint_meta(&cfg, trainer.iteration, &ds)?;
                dump_non_finite(out, &trainer.primitives, trainer.iteration, &meta)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        write_jsonl(&mut metrics, &metrics_path, &report.metrics)?;
        let it = report.metrics.iter;
        if let Some(ev) = &report.densify {
            write_jsonl(&mut densify, &densify_path, ev)?;
            if a.debug_bands {
                dump_bands(&out.join("debug_bands"), it, &trainer)?;
            }
        }
        if report.checkpoint_due {
            let meta = checkpoint_meta(&cfg, it, &ds)?;
            save_checkpoint(&out.join("checkpoints").join(format!("iter_{it:06}.ply")), &trainer.primitives, &meta)?;
        }
        if it % 100 == 0 {
            let m = &report.metrics;
            eprintln!("iter {it:>6}  loss {:.5}  psnr {:>6.2}  n {}", m.loss, m.psnr.unwrap_or(f64::INFINITY), m.n_primitives);
        }
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    densify.flush().map_err(|e| Error::io(&densify_path, e))?;

    let final_path = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_path, &trainer.primitives, &checkpoint_meta(&cfg, trainer.iteration, &ds)?)?;
    let opts = cfg.render_options();
    let finite = |v: f64| v.is_finite().then_some(v);
    let train_psnr = mean_psnr(&trainer.primitives, &trainer.views, &opts)?;
    let test = ds.test_views();
    let test_psnr = if ds.train.is_empty() || test.is_empty() { None } else { finite(mean_psnr(&trainer.primitives, &test, &opts)?) };
    emit(&json!({
        "iterations": trainer.iteration,
        "n_primitives": trainer.primitives.len(),
        "train_psnr": finite(train_psnr),
        "test_psnr": test_psnr,
        "checkpoint": final_path,
    }));
    Ok(())
}

fn dump_bands(dir: &Path, it: usize, trainer: &Trainer) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let view = trainer.views[0];
    let rendered = render(&trainer.primitives, &view.camera, &trainer.cfg.render_options()).rgb;
    let bands = &trainer.cfg.densify.bands;
    for (k, map) in freq_error_map(&rendered, &view.image, bands)?.iter().enumerate() {
        write_png(&dir.join(format!("iter_{it:06}_band{k}.png")), &heatmap(map))?;
    }
    Ok(())
}

/// Writes `nan_dump.json` and the offending scene as `nan_dump.ply`.
fn dump_non_finite(out: &Path, prims: &[SplatPrimitive], iteration: usize, meta: &CheckpointMeta) -> Result<()> {
    save_checkpoint(&out.join("nan_dump.ply"), prims, meta)?;
    let bad: Vec<usize> = prims.iter().enumerate().filter(|(_, p)| !p.is_finite()).map(|(i, _)| i).collect();
    let opacity: Vec<f64> = prims.iter().map(|p| p.opacity()).collect();
    let dump = json!({
        "iteration": iteration,
        "n_primitives": prims.len(),
        "non_finite_primitives": bad,
        "opacity_range": [opacity.iter().cloned().fold(f64::INFINITY, f64::min), opacity.iter().cloned().fold(f64::NEG_INFINITY, f64::max)],
        "max_scale": prims.iter().map(|p| p.max_scale()).fold(0.0, f64::max),
    });
    let path = out.join("nan_dump.json");
    let text = serde_json::to_string_pretty(&dump).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&path, |f| f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e)))?;
    eprintln!("non-finite loss at iteration {iteration}; diagnostics in {}", path.display());
    Ok(())
}

/// A camera placed by eye and target, as accepted by `render --camera`.
#[derive(Deserialize)]
struct LookAt {
    eye: [f64; 3],
    #[serde(default)]
    target: [f64; 3],
    #[serde(default = "default_up")]
    up: [f64; 3],
    focal: f64,
    width: u32,
    height: u32,
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn parse_camera(spec: &str, cameras: impl FnOnce() -> Result<Vec<Camera>>) -> Result<Camera> {
    if let Ok(i) = spec.trim().parse::<usize>() {
        let cams = cameras()?;
        return cams.get(i).copied().ok_or_else(|| Error::Config(format!("camera index {i} out of range (have {})", cams.len())));
    }
    let bad = |e: serde_json::Error| Error::Config(format!("camera is neither an index nor a camera JSON object: {e}"));
    let v: Value = serde_json::from_str(spec).map_err(bad)?;
    if v.get("eye").is_some() {
        let l: LookAt = serde_json::from_value(v).map_err(bad)?;
        return Camera::look_at(Vec3::from_array(l.eye), Vec3::from_array(l.target), Vec3::from_array(l.up), l.focal, l.focal, l.width, l.height);
    }
    let cam: Camera = serde_json::from_value(v).map_err(bad)?;
    cam.validate()?;
    Ok(cam)
}

fn saved_cameras(checkpoint: &Path) -> Result<Vec<Camera>> {
    let dirs = checkpoint.ancestors().skip(1).take(2);
    for d in dirs {
        let p = d.join(CAMERAS_FILE);
        if p.is_file() {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            return serde_json::from_str(&text).map_err(|e| Error::MalformedJson { path: p, message: e.to_string() });
        }
    }
    Err(Error::Config(format!("no --data given and no {CAMERAS_FILE} found near {}", checkpoint.display())))
}

fn background(meta: &CheckpointMeta) -> [f64; 3] {
    meta.config
        .get("train")
        .and_then(|t| t.get("background"))
        .and_then(|b| serde_json::from_value(b.clone()).ok())
        .unwrap_or([0.0; 3])
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let cam = parse_camera(&a.camera, || match &a.data {
        Some(d) => Ok(load_dataset(d)?.cameras()),
        None => saved_cameras(&a.checkpoint),
    })?;
    let opts = RenderOptions {
        background: background(&ckpt.meta),
        ..Default::default()
    };
    let img = render(&ckpt.primitives, &cam, &opts).rgb;
    match a.out.extension().and_then(|e| e.to_str()) {
        Some("ngsf") => write_ngsf(&a.out, &img)?,
        _ => write_png(&a.out, &img)?,
    }
    emit(&json!({"out": a.out, "width": cam.width, "height": cam.height}));
    Ok(())
}

#[derive(Serialize)]
struct ImageScore {
    name: String,
    psnr: Option<f64>,
    ssim: f64,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    if let Some(data) = ckpt.meta.config.get("data") {
        let dims = (data.get("width").and_then(Value::as_u64), data.get("height").and_then(Value::as_u64));
        for v in &ds.views {
            if let (Some(w), Some(h)) = dims {
                if (w, h) != (v.camera.width as u64, v.camera.height as u64) {
                    return Err(Error::DimensionMismatch {
                        path: a.data.clone(),
                        message: format!("view {} is {}x{}, checkpoint was trained on {w}x{h}", v.name, v.camera.width, v.camera.height),
                    });
                }
            }
        }
    }
    let views = match a.split.as_str() {
        "test" if ds.test.is_empty() || ds.train.is_empty() => ds.views.iter().collect(),
        "test" => ds.test_views(),
        "train" => training_views(&ds),
        "all" => ds.views.iter().collect::<Vec<_>>(),
        s => return Err(Error::Config(format!("unknown split `{s}` (test, train or all)"))),
    };
    let opts = RenderOptions {
        background: background(&ckpt.meta),
        ..Default::default()
    };
    let loss = LossConfig::default();
    let mut scores = Vec::new();
    for v in &views {
        let img = render(&ckpt.primitives, &v.camera, &opts).rgb;
        let p = psnr(&img, &v.image)?;
        scores.push(ImageScore {
            name: v.name.clone(),
            psnr: p.is_finite().then_some(p),
            ssim: ssim(&img, &v.image, &loss)?,
        });
    }
    let n = scores.len().max(1) as f64;
    let mean_psnr = scores.iter().map(|s| s.psnr.unwrap_or(f64::INFINITY)).sum::<f64>() / n;
    let mean_ssim = scores.iter().map(|s| s.ssim).sum::<f64>() / n;
    emit(&json!({
        "split": a.split,
        "images": scores,
        "mean_psnr": mean_psnr.is_finite().then_some(mean_psnr),
        "mean_ssim": mean_ssim,
    }));
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        pattern: a.pattern,
        cell_px: a.cell_px,
        image_size: a.image_size,
        n_views: a.n_views,
        radius: a.radius,
        arc_degrees: a.arc_degrees,
        n_init_points: a.n_points,
        seed: a.seed,
    };
    let ds = synthesize(&spec)?;
    save_dataset(&ds, &a.out)?;
    emit(&json!({
        "out": a.out,
        "spec": spec,
        "n_views": ds.views.len(),
        "n_points": ds.initial_points.len(),
    }));
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let fault = match a.fault.as_deref() {
        None => Fault::None,
        Some("blend-occlusion") => Fault::BlendOcclusion,
        Some(f) => return Err(Error::Config(format!("unknown fault `{f}`"))),
    };
    let cfg = GradcheckConfig {
        seed: a.seed,
        n_primitives: a.n_primitives as usize,
        image_size: a.image_size,
        h: a.h,
    };
    let reports = run_gradcheck_with_fault(&cfg, fault)?;
    for r in &reports {
        eprintln!("lambda {}: max rel error {:.3e} {}", r.lambda, r.max_rel_error, if r.passed { "ok" } else { "FAIL" });
        for g in &r.groups {
            eprintln!("  {:<9} {:.3e} over {} params", g.group, g.max_rel_error, g.checked);
        }
    }
    let table = convergence_table(&cfg, &a.sweep)?;
    eprintln!("h          max abs error");
    for (h, e) in &table {
        eprintln!("{h:<10.3e} {e:.3e}");
    }
    let passed = reports.iter().all(|r| r.passed);
    emit(&json!({
        "seed": a.seed,
        "h": a.h,
        "reports": reports,
        "convergence": table.iter().map(|(h, e)| json!({"h": h, "max_abs_error": e})).collect::<Vec<_>>(),
        "passed": passed,
    }));
    if passed {
        Ok(())
    } else {
        Err(Error::Config("gradient check failed".into()))
    }
}

pub const OPACITY_BINS: usize = 10;

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let per = ckpt.meta.properties_per_vertex()?;
    let n = ckpt.primitives.len();
    let file_bytes = fs::metadata(&a.checkpoint).map_err(|e| Error::io(&a.checkpoint, e))?.len() as usize;
    let param_bytes = n * per * 4;
    let mut sq = [0.0; GROUPS.len()];
    let mut hist = [0usize; OPACITY_BINS];
    for p in &ckpt.primitives {
        let flat = flatten_params(p);
        for (g, &(_, lo, hi)) in GROUPS.iter().enumerate() {
            sq[g] += flat[lo..hi.min(flat.len())].iter().map(|v| v * v).sum::<f64>();
        }
        let bin = ((p.opacity() * OPACITY_BINS as f64) as usize).min(OPACITY_BINS - 1);
        hist[bin] += 1;
    }
    let norms: serde_json::Map<String, Value> = GROUPS.iter().zip(sq).map(|(&(name, _, _), s)| (name.to_string(), json!(s.sqrt()))).collect();
    emit(&json!({
        "checkpoint": a.checkpoint,
        "meta": meta_path(&a.checkpoint),
        "head_kind": ckpt.meta.head_kind,
        "iteration": ckpt.meta.iteration,
        "count": n,
        "properties_per_vertex": per,
        "parameter_bytes": param_bytes,
        "header_bytes": file_bytes - param_bytes,
        "file_bytes": file_bytes,
        "group_norms": norms,
        "opacity_histogram": {
            "edges": (0..=OPACITY_BINS).map(|i| i as f64 / OPACITY_BINS as f64).collect::<Vec<_>>(),
            "counts": hist,
        },
    }));
    Ok(())
}
