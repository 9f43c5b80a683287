//! Trains the two-region scene under each densification strategy with a
//! shared primitive cap and reports final PSNR and primitive count.
//!
//! cargo run --release --example densify_ablation -- [iterations] [seed]

use gabor_splat::densify::Strategy;
use gabor_splat::scene_io::{synthesize, Pattern, SynthSpec};
use gabor_splat::train::{mean_psnr, train_from_points, TrainConfig};

fn main() -> gabor_splat::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(600);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let ds = synthesize(&SynthSpec {
        pattern: Pattern::TwoRegion,
        cell_px: 4.0,
        image_size: 64,
        n_views: 1,
        n_init_points: 16,
        seed,
        ..Default::default()
    })?;
    let views: Vec<_> = ds.views.iter().collect();
    for strategy in [Strategy::FrequencyAware, Strategy::ErrorBased, Strategy::GradientBased] {
        let mut cfg = TrainConfig { iterations, seed, ..Default::default() };
        cfg.densify.strategy = strategy;
        cfg.densify.max_primitives = 200;
        cfg.densify.interval = 50;
        let r = train_from_points(&ds.initial_points, &views, &cfg)?;
        let psnr = mean_psnr(&r.primitives, &views, &cfg.render_options())?;
        let added: usize = r.densify_log.iter().map(|e| e.clones + e.splits).sum();
        println!("{strategy:?}: psnr {psnr:.2} dB, {} primitives ({added} added)", r.primitives.len());
    }
    Ok(())
}
