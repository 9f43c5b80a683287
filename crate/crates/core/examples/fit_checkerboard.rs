//! Fits 16 splats to a frontal checkerboard, once with sinusoidal color
//! heads and once with constant-color (degree-0 SH) heads, and compares PSNR.
//!
//! cargo run --release --example fit_checkerboard -- [steps] [seed]

use std::time::Instant;

use gabor_splat::densify::DensifyConfig;
use gabor_splat::geometry::Vec3;
use gabor_splat::scene_io::{synthesize, Pattern, SynthSpec};
use gabor_splat::train::{mean_psnr, train_from_points, InitConfig, TrainConfig};

fn main() -> gabor_splat::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let ds = synthesize(&SynthSpec {
        pattern: Pattern::Checkerboard,
        cell_px: 8.0,
        image_size: 64,
        n_views: 1,
        ..Default::default()
    })?;
    let views: Vec<_> = ds.views.iter().collect();
    let grid: Vec<Vec3> = (0..16)
        .map(|i| Vec3::new(-0.375 + 0.25 * (i % 4) as f64, -0.375 + 0.25 * (i / 4) as f64, 0.0))
        .collect();

    for (label, init) in [
        ("siren", InitConfig { random_rotation: false, ..Default::default() }),
        ("sh0", InitConfig { head: "sh".into(), sh_degree: 0, random_rotation: false, ..Default::default() }),
    ] {
        let cfg = TrainConfig {
            iterations: steps,
            seed,
            init,
            densify: DensifyConfig { densify_until: Some(0), ..Default::default() },
            ..Default::default()
        };
        let t = Instant::now();
        let r = train_from_points(&grid, &views, &cfg)?;
        let psnr = mean_psnr(&r.primitives, &views, &cfg.render_options())?;
        println!("{label:>6}: psnr {psnr:.2} dB after {steps} steps ({:.1}s)", t.elapsed().as_secs_f64());
    }
    Ok(())
}
