//! Procedural datasets: a textured unit square in the z = 0 plane seen by a
//! fan of cameras on an arc.
//!
//! Texture coordinates are in texels of the frontal view, where the square
//! exactly fills an `image_size` image, so `cell_px` is a size in frontal
//! pixels. Ground truth is rendered by exact ray/plane sampling with a 4×4
//! box filter per pixel.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{make_ray, Camera, Vec3};
use crate::image::Image;

use super::images::read_png;
use super::{Dataset, View};

pub const SUPERSAMPLE: usize = 4;
pub const CHECKER_LEVELS: (f64, f64) = (0.1, 0.9);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    /// Square cells of `cell_px`.
    Checkerboard,
    /// Vertical sinusoidal stripes with period `cell_px`.
    Stripes,
    /// Left half a smooth vertical ramp, right half stripes of period `cell_px`.
    TwoRegion,
    /// A PNG stretched over the square.
    TextureFile(PathBuf),
}

impl std::str::FromStr for Pattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checkerboard" => Ok(Pattern::Checkerboard),
            "stripes" => Ok(Pattern::Stripes),
            "two-region" => Ok(Pattern::TwoRegion),
            _ => match s.strip_prefix("texture-file:") {
                Some(p) => Ok(Pattern::TextureFile(PathBuf::from(p))),
                None => Err(Error::Config(format!("unknown pattern '{s}'"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub pattern: Pattern,
    pub cell_px: f64,
    pub image_size: u32,
    pub n_views: usize,
    /// Camera distance from the square's center.
    pub radius: f64,
    /// Total angle of the camera arc, in degrees, swept about the y axis.
    pub arc_degrees: f64,
    pub n_init_points: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            pattern: Pattern::Checkerboard,
            cell_px: 8.0,
            image_size: 64,
            n_views: 1,
            radius: 2.0,
            arc_degrees: 40.0,
            n_init_points: 64,
            seed: 0,
        }
    }
}

enum Texture {
    Procedural { pattern: Pattern, cell: f64, size: f64 },
    Bitmap(Image),
}

impl Texture {
    fn new(spec: &SynthSpec) -> Result<Self> {
        match &spec.pattern {
            Pattern::TextureFile(p) => Ok(Texture::Bitmap(read_png(p)?)),
            p => Ok(Texture::Procedural {
                pattern: p.clone(),
                cell: spec.cell_px,
                size: spec.image_size as f64,
            }),
        }
    }

    /// RGB at texture coordinate (s, t) in [0, 1]², t growing downwards.
    fn sample(&self, s: f64, t: f64) -> [f64; 3] {
        match self {
            Texture::Procedural { pattern, cell, size } => {
                let (x, y) = (s * size, t * size);
                let stripes = |x: f64| 0.5 + 0.4 * (2.0 * std::f64::consts::PI * x / cell).cos();
                let v = match pattern {
                    Pattern::Checkerboard => {
                        let odd = ((x / cell).floor() + (y / cell).floor()) as i64 % 2 != 0;
                        if odd {
                            CHECKER_LEVELS.1
                        } else {
                            CHECKER_LEVELS.0
                        }
                    }
                    Pattern::Stripes => stripes(x),
                    Pattern::TwoRegion if s < 0.5 => 0.3 + 0.4 * t,
                    Pattern::TwoRegion => stripes(x),
                    Pattern::TextureFile(_) => unreachable!(),
                };
                [v; 3]
            }
            Texture::Bitmap(img) => {
                // bilinear on texel centers, clamped at the border
                let fx = (s * img.width as f64 - 0.5).clamp(0.0, img.width as f64 - 1.0);
                let fy = (t * img.height as f64 - 0.5).clamp(0.0, img.height as f64 - 1.0);
                let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
                let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
                let mut out = [0.0; 3];
                for (c, o) in out.iter_mut().enumerate() {
                    let top = img.get(y0, x0, c) * (1.0 - ax) + img.get(y0, x1, c) * ax;
                    let bot = img.get(y1, x0, c) * (1.0 - ax) + img.get(y1, x1, c) * ax;
                    *o = top * (1.0 - ay) + bot * ay;
                }
                out
            }
        }
    }
}

/// Cameras spread evenly over the arc, all aimed at the origin. One camera
/// is frontal. Focal length makes the square fill the frontal image.
pub fn arc_cameras(spec: &SynthSpec) -> Result<Vec<Camera>> {
    let n = spec.n_views.max(1);
    let f = spec.image_size as f64 * spec.radius;
    (0..n)
        .map(|i| {
            let frac = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 - 0.5 };
            let theta = (frac * spec.arc_degrees).to_radians();
            let eye = Vec3::new(spec.radius * theta.sin(), 0.0, spec.radius * theta.cos());
            Camera::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), f, f, spec.image_size, spec.image_size)
        })
        .collect()
}

fn render_plane(tex: &Texture, cam: &Camera) -> Image {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let n = SUPERSAMPLE;
    let inv = 1.0 / (n * n) as f64;
    let mut img = Image::new(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..n {
                for sx in 0..n {
                    let px = x as f64 + (sx as f64 + 0.5) / n as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / n as f64;
                    let ray = make_ray(cam, px, py);
                    if ray.direction.z.abs() < 1e-12 {
                        continue;
                    }
                    let t = -ray.origin.z / ray.direction.z;
                    if t <= 0.0 {
                        continue;
                    }
                    let p = ray.origin + ray.direction * t;
                    let (s, tt) = (p.x + 0.5, 0.5 - p.y);
                    if !(0.0..1.0).contains(&s) || !(0.0..1.0).contains(&tt) {
                        continue;
                    }
                    let c = tex.sample(s, tt);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for (k, a) in acc.iter().enumerate() {
                img.set(y, x, k, a * inv);
            }
        }
    }
    img
}

/// Builds the dataset in memory. Points are uniform on the square.
pub fn synthesize(spec: &SynthSpec) -> Result<Dataset> {
    if spec.n_views == 0 {
        return Err(Error::Config("n_views must be >= 1".into()));
    }
    let tex = Texture::new(spec)?;
    let cameras = arc_cameras(spec)?;
    let views: Vec<View> = cameras
        .into_iter()
        .enumerate()
        .map(|(i, camera)| View {
            name: format!("r_{i:03}"),
            image: render_plane(&tex, &camera),
            camera,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let initial_points = (0..spec.n_init_points)
        .map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0))
        .collect();
    Ok(Dataset::with_split(views, initial_points))
}

/// Writes `transforms.json`, PNG frames and `points.ply` under `dir`.
pub fn generate_synthetic(spec: &SynthSpec, dir: &Path) -> Result<Dataset> {
    let ds = synthesize(spec)?;
    super::save_dataset(&ds, dir)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{fft2, signed_freq};

    #[test]
    fn frontal_checkerboard_is_exact() {
        let spec = SynthSpec { image_size: 32, ..Default::default() };
        let ds = synthesize(&spec).unwrap();
        let img = &ds.views[0].image;
        for y in 0..32 {
            for x in 0..32 {
                let want = if (x / 8 + y / 8) % 2 == 1 { 0.9 } else { 0.1 };
                assert!((img.get(y, x, 0) - want).abs() < 1e-12, "({y},{x})");
            }
        }
    }

    #[test]
    fn stripes_energy_at_quarter_cycle() {
        let spec = SynthSpec { pattern: Pattern::Stripes, cell_px: 4.0, image_size: 32, ..Default::default() };
        let img = synthesize(&spec).unwrap().views[0].image.luminance();
        let mean = img.data.iter().sum::<f64>() / img.len() as f64;
        let spec = fft2(&img.map(|v| v - mean));
        let (mut best, mut at) = (0.0, 0.0);
        for ky in 0..32 {
            for kx in 0..32 {
                let e = spec.get(ky, kx).norm_sqr();
                if e > best {
                    let (fx, fy) = (signed_freq(kx, 32), signed_freq(ky, 32));
                    best = e;
                    at = (fx * fx + fy * fy).sqrt();
                }
            }
        }
        assert!((at - 0.25).abs() <= 1.0 / 32.0);
    }

    #[test]
    fn arc_has_frontal_camera_and_requested_count() {
        let spec = SynthSpec { n_views: 5, ..Default::default() };
        let cams = arc_cameras(&spec).unwrap();
        assert_eq!(cams.len(), 5);
        assert!((cams[2].position - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        for c in &cams {
            assert!((c.position.norm() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_region_halves_differ_in_frequency() {
        let spec = SynthSpec { pattern: Pattern::TwoRegion, cell_px: 4.0, image_size: 32, ..Default::default() };
        let img = &synthesize(&spec).unwrap().views[0].image;
        // left half is smooth: neighbouring columns nearly equal
        for y in 0..32 {
            for x in 1..15 {
                assert!((img.get(y, x, 0) - img.get(y, x - 1, 0)).abs() < 0.02);
            }
        }
        let right: Vec<f64> = (16..32).map(|x| img.get(5, x, 0)).collect();
        let range = right.iter().cloned().fold(f64::MIN, f64::max) - right.iter().cloned().fold(f64::MAX, f64::min);
        assert!(range > 0.5);
    }
}
