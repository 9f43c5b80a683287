use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ngs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ngs")).args(args).output().expect("spawn ngs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = ngs(args);
    assert!(out.status.success(), "ngs {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A tiny dataset plus a short training run in `root`.
fn trained(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    let run = root.join("run");
    ok_json(&["synth", "--out", p(&data), "--image-size", "24", "--n-views", "4", "--n-points", "20", "--seed", "3"]);
    ok_json(&["train", "--data", p(&data), "--out", p(&run), "--iterations", "40", "--set", "checkpoint_every=20"]);
    (data, run)
}

#[test]
fn train_writes_logs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = trained(dir.path());
    for f in ["cameras.json", "config.txt", "metrics.jsonl", "densify.jsonl", "final.ply", "checkpoints/iter_000020.ply", "checkpoints/iter_000040.ply"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 40);
    let first: Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    for key in ["iter", "loss", "n_primitives", "wall_ms"] {
        assert!(first.get(key).is_some(), "metrics line lacks {key}");
    }
}

#[test]
fn render_eval_and_inspect_agree_on_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained(dir.path());
    let ckpt = run.join("final.ply");

    let a = dir.path().join("a.ngsf");
    let b = dir.path().join("b.ngsf");
    ok_json(&["render", "--checkpoint", p(&ckpt), "--camera", "0", "--out", p(&a)]);
    ok_json(&["render", "--checkpoint", p(&ckpt), "--camera", "0", "--data", p(&data), "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let png = dir.path().join("a.png");
    let r = ok_json(&["render", "--checkpoint", p(&ckpt), "--camera", r#"{"eye":[0,0,3],"target":[0,0,0],"up":[0,1,0],"focal":30,"width":20,"height":10}"#, "--out", p(&png)]);
    assert_eq!((r["width"].as_u64(), r["height"].as_u64()), (Some(20), Some(10)));

    let eval = ok_json(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--split", "all"]);
    let images = eval["images"].as_array().unwrap();
    assert_eq!(images.len(), 4);
    assert!(images.iter().all(|i| i["ssim"].as_f64().is_some() && i.get("psnr").is_some()));
    assert!(eval["mean_psnr"].as_f64().unwrap() > 5.0);

    let info = ok_json(&["inspect", "--checkpoint", p(&ckpt)]);
    let count = info["count"].as_u64().unwrap();
    assert_eq!(info["properties_per_vertex"], 67);
    assert_eq!(info["parameter_bytes"].as_u64().unwrap(), count * 67 * 4);
    assert_eq!(info["file_bytes"].as_u64().unwrap(), std::fs::metadata(&ckpt).unwrap().len());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ply");
    assert_eq!(ngs(&["inspect", "--checkpoint", p(&missing)]).status.code(), Some(1));
    assert_eq!(ngs(&["frobnicate"]).status.code(), Some(1));

    let corrupt = dir.path().join("bad.ply");
    std::fs::write(&corrupt, b"ply\nformat binary_little_endian 1.0\nelement vertex 5\n").unwrap();
    let out = ngs(&["inspect", "--checkpoint", p(&corrupt)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let (data, _) = trained(dir.path());
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "densify.treshold = 0.1\n").unwrap();
    let out = ngs(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("densify.treshold"));

    // a learning rate this large overflows on the first step
    let blown = dir.path().join("blown");
    let out = ngs(&["train", "--data", p(&data), "--out", p(&blown), "--iterations", "20", "--set", "lr.head=1e308"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(blown.join("nan_dump.json").exists());
}

#[test]
fn gradcheck_passes_and_catches_a_planted_fault() {
    let good = ok_json(&["gradcheck", "--seed", "4", "--n-primitives", "2", "--image-size", "5"]);
    assert_eq!(good["passed"], true);
    let out = ngs(&["gradcheck", "--seed", "4", "--n-primitives", "3", "--image-size", "6", "--fault", "blend-occlusion"]);
    assert_eq!(out.status.code(), Some(1));
    let body: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(body["passed"], false);
}

#[test]
fn synth_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let s = ok_json(&["synth", "--out", p(&data), "--pattern", "two-region", "--image-size", "16", "--n-views", "3", "--n-points", "12"]);
    assert_eq!(s["n_views"], 3);
    assert_eq!(s["n_points"], 12);
    let ds = gabor_splat::scene_io::load_dataset(&data).unwrap();
    assert_eq!(ds.views.len(), 3);
    assert_eq!(ds.initial_points.len(), 12);
    assert_eq!((ds.views[0].image.width, ds.views[0].image.height), (16, 16));
}

#[test]
fn debug_bands_writes_one_heatmap_per_band_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok_json(&["synth", "--out", p(&data), "--image-size", "24", "--n-views", "2", "--n-points", "16"]);
    ok_json(&["train", "--data", p(&data), "--out", p(&run), "--iterations", "30", "--set", "densify.interval=10", "--debug-bands"]);
    let rounds = std::fs::read_to_string(run.join("densify.jsonl")).unwrap().lines().count();
    let maps = std::fs::read_dir(run.join("debug_bands")).unwrap().count();
    assert!(rounds > 0);
    assert_eq!(maps, rounds * 3);
    let img = gabor_splat::scene_io::read_png(&run.join("debug_bands").join("iter_000010_band2.png")).unwrap();
    assert_eq!((img.width, img.height, img.channels), (24, 24, 3));
}
