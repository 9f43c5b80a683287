use gabor_splat::densify::Strategy;
use gabor_splat::scene_io::{load_checkpoint, save_checkpoint, synthesize, CheckpointMeta, Pattern, SynthSpec};
use gabor_splat::train::{mean_psnr, train_from_points, TrainConfig};

#[test]
fn training_improves_and_survives_a_checkpoint() {
    let ds = synthesize(&SynthSpec { pattern: Pattern::TwoRegion, cell_px: 4.0, image_size: 32, n_views: 2, n_init_points: 24, ..Default::default() }).unwrap();
    let views: Vec<_> = ds.views.iter().collect();
    let mut cfg = TrainConfig { iterations: 200, ..Default::default() };
    cfg.densify.interval = 50;
    cfg.densify.max_primitives = 80;
    cfg.densify.strategy = Strategy::FrequencyAware;
    let r = train_from_points(&ds.initial_points, &views, &cfg).unwrap();

    let first = r.metrics[..10].iter().map(|m| m.loss).sum::<f64>();
    let last = r.metrics[r.metrics.len() - 10..].iter().map(|m| m.loss).sum::<f64>();
    assert!(last < first, "loss went from {first} to {last}");
    assert!(r.primitives.len() <= 80);
    assert!(!r.densify_log.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ply");
    let meta = CheckpointMeta::new(cfg.init.head_kind().unwrap(), cfg.init.omega0, cfg.iterations, serde_json::to_value(&cfg).unwrap());
    save_checkpoint(&path, &r.primitives, &meta).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let opts = cfg.render_options();
    let before = mean_psnr(&r.primitives, &views, &opts).unwrap();
    let after = mean_psnr(&back.primitives, &views, &opts).unwrap();
    // parameters are stored as f32
    assert!((before - after).abs() < 1e-3, "{before} vs {after}");
}
