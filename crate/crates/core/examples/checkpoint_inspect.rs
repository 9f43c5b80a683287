//! Saves a freshly initialized scene, reads the header back and shows the
//! per-primitive layout and storage cost.
//!
//! cargo run --release --example checkpoint_inspect -- [path]

use std::path::PathBuf;

use gabor_splat::primitive::flatten_params;
use gabor_splat::scene_io::{load_checkpoint, property_names, save_checkpoint, CheckpointMeta};
use gabor_splat::train::{init_scene, InitConfig, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scene.ply".into()));
    let cfg = TrainConfig { init: InitConfig::default(), ..Default::default() };
    let points: Vec<_> = (0..100)
        .map(|i| gabor_splat::geometry::Vec3::new((i % 10) as f64 * 0.1 - 0.45, (i / 10) as f64 * 0.1 - 0.45, 0.0))
        .collect();
    let prims = init_scene(&points, &cfg.init, &mut ChaCha8Rng::seed_from_u64(0))?;
    let meta = CheckpointMeta::new(cfg.init.head_kind()?, cfg.init.omega0, 0, serde_json::to_value(&cfg).unwrap());
    save_checkpoint(&path, &prims, &meta)?;

    let per = flatten_params(&prims[0]).len();
    let names = property_names(per - 10);
    let bytes = std::fs::metadata(&path)?.len();
    let body = prims.len() * per * 4;
    println!("{}: {} primitives, {per} floats each", path.display(), prims.len());
    println!("properties: {} ... {}", names[..12].join(" "), names[per - 1]);
    println!("{bytes} bytes = {} header + {body} parameters", bytes as usize - body);

    let back = load_checkpoint(&path)?;
    let same = back.primitives.iter().zip(&prims).all(|(a, b)| {
        flatten_params(a).iter().zip(flatten_params(b)).all(|(x, y)| x.to_bits() == (y as f32 as f64).to_bits())
    });
    println!("reload matches stored f32 values: {same}");
    Ok(())
}
