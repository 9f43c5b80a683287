//! Renders an untrained two-region scene, computes the per-band error maps
//! used to score densification candidates, and writes them as heatmaps.
//!
//! cargo run --release --example band_error_maps -- [out_dir]

use std::path::PathBuf;

use gabor_splat::render::{render, RenderOptions};
use gabor_splat::scene_io::{heatmap, synthesize, write_png, Pattern, SynthSpec};
use gabor_splat::spectral::{freq_error_map, FreqErrorConfig};
use gabor_splat::train::{init_scene, InitConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "band_maps".into()));
    std::fs::create_dir_all(&out)?;

    let ds = synthesize(&SynthSpec { pattern: Pattern::TwoRegion, cell_px: 4.0, image_size: 64, n_views: 1, ..Default::default() })?;
    let view = &ds.views[0];
    let prims = init_scene(&ds.initial_points, &InitConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let rendered = render(&prims, &view.camera, &RenderOptions::default()).rgb;

    let cfg = FreqErrorConfig::default();
    let maps = freq_error_map(&rendered, &view.image, &cfg)?;
    write_png(&out.join("target.png"), &view.image)?;
    write_png(&out.join("render.png"), &rendered)?;
    for (band, map) in cfg.bands.iter().zip(&maps) {
        // the untrained render misses both halves; only the top band singles out the stripes
        let half = map.width / 2;
        let (mut left, mut right) = (0.0, 0.0);
        for y in 0..map.height {
            for x in 0..map.width {
                if x < half { left += map.get(y, x, 0) } else { right += map.get(y, x, 0) }
            }
        }
        let name = format!("band_{:.2}_{:.2}.png", band.lo, band.hi);
        write_png(&out.join(&name), &heatmap(map))?;
        println!("{name}: error mass left {left:.2}, right {right:.2}");
    }
    println!("wrote {}", out.display());
    Ok(())
}
