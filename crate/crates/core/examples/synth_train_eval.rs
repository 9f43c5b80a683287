//! End to end: write a synthetic dataset to disk, load it back, train on
//! the train split, checkpoint, reload and score the held-out views.
//!
//! cargo run --release --example synth_train_eval -- [dir] [iterations]

use std::path::PathBuf;

use gabor_splat::loss::{psnr, ssim};
use gabor_splat::render::render;
use gabor_splat::scene_io::{generate_synthetic, load_checkpoint, load_dataset, save_checkpoint, CheckpointMeta, Pattern, SynthSpec};
use gabor_splat::train::{train_from_points, TrainConfig};

fn main() -> gabor_splat::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synth_run".into()));
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);

    let spec = SynthSpec { pattern: Pattern::Checkerboard, cell_px: 6.0, image_size: 48, n_views: 8, ..Default::default() };
    generate_synthetic(&spec, &dir.join("data"))?;
    let ds = load_dataset(&dir.join("data"))?;
    println!("{} views ({} train, {} test), {} seed points", ds.views.len(), ds.train.len(), ds.test.len(), ds.initial_points.len());

    let cfg = TrainConfig { iterations, ..Default::default() };
    let train_views: Vec<_> = ds.train.iter().map(|&i| &ds.views[i]).collect();
    let result = train_from_points(&ds.initial_points, &train_views, &cfg)?;

    let ckpt = dir.join("final.ply");
    let meta = CheckpointMeta::new(cfg.init.head_kind()?, cfg.init.omega0, iterations, serde_json::to_value(&cfg).unwrap());
    save_checkpoint(&ckpt, &result.primitives, &meta)?;
    let loaded = load_checkpoint(&ckpt)?;
    println!("checkpoint {} with {} primitives", ckpt.display(), loaded.primitives.len());

    for &i in &ds.test {
        let view = &ds.views[i];
        let img = render(&loaded.primitives, &view.camera, &cfg.render_options()).rgb;
        println!("{}: psnr {:.2} dB, ssim {:.4}", view.name, psnr(&img, &view.image)?, ssim(&img, &view.image, &cfg.loss)?);
    }
    Ok(())
}
