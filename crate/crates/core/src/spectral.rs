//! Band-limited image error.
//!
//! Both images are reduced to one channel, transformed, masked to a radial
//! frequency band, transformed back, locally averaged, and differenced. The
//! result is one non-negative error map per band.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Largest radial frequency on the grid, in cycles/pixel.
pub const MAX_RADIUS: f64 = 0.5 * std::f64::consts::SQRT_2;

/// Half-open radial band `[lo, hi)` in cycles/pixel (Nyquist is 0.5).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub lo: f64,
    pub hi: f64,
}

impl FrequencyBand {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::Config(format!("invalid frequency band [{lo}, {hi})")));
        }
        Ok(FrequencyBand { lo, hi })
    }

    pub fn contains(&self, r: f64) -> bool {
        self.lo <= r && r < self.hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    Luminance,
    PerChannelMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqErrorConfig {
    pub bands: Vec<FrequencyBand>,
    pub avg_kernel: usize,
    pub channel_mode: ChannelMode,
}

impl Default for FreqErrorConfig {
    fn default() -> Self {
        FreqErrorConfig {
            bands: vec![
                FrequencyBand { lo: 0.01, hi: 0.10 },
                FrequencyBand { lo: 0.10, hi: 0.20 },
                FrequencyBand { lo: 0.20, hi: 0.40 },
            ],
            avg_kernel: 17,
            channel_mode: ChannelMode::Luminance,
        }
    }
}

impl FreqErrorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.avg_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("avg_kernel must be odd, got {}", self.avg_kernel)));
        }
        for b in &self.bands {
            FrequencyBand::new(b.lo, b.hi)?;
        }
        Ok(())
    }
}

/// Complex H×W grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn get(&self, ky: usize, kx: usize) -> Complex64 {
        self.data[ky * self.width + kx]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Signed frequency of bin `k` on an `n`-point grid, in [-0.5, 0.5).
pub fn signed_freq(k: usize, n: usize) -> f64 {
    let k = if 2 * k >= n { k as f64 - n as f64 } else { k as f64 };
    k / n as f64
}

fn transform(height: usize, width: usize, data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for r in data.chunks_exact_mut(width) {
        row.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}

/// Unnormalized forward DFT of a single-channel image.
pub fn fft2(img: &Image) -> Spectrum {
    assert_eq!(img.channels, 1, "fft2 takes a single-channel image");
    let mut data: Vec<Complex64> = img.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(img.height, img.width, &mut data, false);
    Spectrum {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Inverse DFT scaled by 1/(HW), complex output.
pub fn ifft2(spec: &Spectrum) -> Spectrum {
    let mut data = spec.data.clone();
    transform(spec.height, spec.width, &mut data, true);
    let n = (spec.height * spec.width) as f64;
    for c in data.iter_mut() {
        *c /= n;
    }
    Spectrum { data, ..*spec }
}

/// Real part of the inverse transform.
pub fn ifft2_real(spec: &Spectrum) -> Image {
    let inv = ifft2(spec);
    Image::from_data(spec.height, spec.width, 1, inv.data.iter().map(|c| c.re).collect()).expect("shape")
}

pub fn bandcrop(spec: &Spectrum, band: FrequencyBand) -> Spectrum {
    let mut out = spec.clone();
    for ky in 0..spec.height {
        let fy = signed_freq(ky, spec.height);
        for kx in 0..spec.width {
            let fx = signed_freq(kx, spec.width);
            if !band.contains((fx * fx + fy * fy).sqrt()) {
                out.data[ky * spec.width + kx] = Complex64::new(0.0, 0.0);
            }
        }
    }
    out
}

/// k×k box mean with replicate padding, applied per channel.
pub fn box_avg(img: &Image, k: usize) -> Image {
    assert!(k % 2 == 1, "box kernel must be odd");
    let r = (k / 2) as isize;
    let (h, w, c) = (img.height as isize, img.width as isize, img.channels);
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let mut tmp = Image::new(img.height, img.width, c);
    for y in 0..img.height {
        for x in 0..w {
            for ch in 0..c {
                let s: f64 = (x - r..=x + r).map(|xx| img.get(y, clamp(xx, w), ch)).sum();
                tmp.set(y, x as usize, ch, s / k as f64);
            }
        }
    }
    let mut out = Image::new(img.height, img.width, c);
    for y in 0..h {
        for x in 0..img.width {
            for ch in 0..c {
                let s: f64 = (y - r..=y + r).map(|yy| tmp.get(clamp(yy, h), x, ch)).sum();
                out.set(y as usize, x, ch, s / k as f64);
            }
        }
    }
    out
}

pub fn to_single_channel(img: &Image, mode: ChannelMode) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    match mode {
        ChannelMode::Luminance if img.channels == 3 => img.luminance(),
        _ => img.channel_mean(),
    }
}

/// Band-pass filtered, locally averaged single-channel image, one per band.
pub fn band_images(img: &Image, cfg: &FreqErrorConfig) -> Vec<Image> {
    let spec = fft2(&to_single_channel(img, cfg.channel_mode));
    cfg.bands
        .iter()
        .map(|&b| box_avg(&ifft2_real(&bandcrop(&spec, b)), cfg.avg_kernel))
        .collect()
}

/// One non-negative per-pixel error map per configured band.
pub fn freq_error_map(render: &Image, gt: &Image, cfg: &FreqErrorConfig) -> Result<Vec<Image>> {
    render.check_same_shape(gt)?;
    let a = band_images(render, cfg);
    let b = band_images(gt, cfg);
    Ok(a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            let data = x.data.iter().zip(&y.data).map(|(p, q)| (p - q).abs()).collect();
            Image::from_data(x.height, x.width, 1, data).expect("shape")
        })
        .collect())
}

/// Pixelwise sum of per-band maps.
pub fn sum_maps(maps: &[Image]) -> Option<Image> {
    let mut it = maps.iter();
    let mut acc = it.next()?.clone();
    for m in it {
        for (a, b) in acc.data.iter_mut().zip(&m.data) {
            *a += b;
        }
    }
    Some(acc)
}
