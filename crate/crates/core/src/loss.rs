//! Photometric losses and metrics: L1, Gaussian-window SSIM, the combined
//! training loss `λ·L1 + (1 − λ)·(1 − SSIM)`, and PSNR.
//!
//! SSIM is evaluated on the "valid" region only (the window never leaves the
//! image), per channel, and averaged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub dynamic_range: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.8,
            ssim_window: 11,
            ssim_sigma: 1.5,
            dynamic_range: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("loss.lambda {} outside [0, 1]", self.lambda)));
        }
        if self.ssim_window < 3 || self.ssim_window.is_multiple_of(2) {
            return Err(Error::Config(format!("loss.ssim_window {} must be odd and >= 3", self.ssim_window)));
        }
        if !(self.ssim_sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::Config("loss.ssim_sigma and loss.dynamic_range must be positive".into()));
        }
        Ok(())
    }

    fn uses_ssim(&self) -> bool {
        self.lambda < 1.0
    }
}

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Per-pixel absolute error averaged over channels.
pub fn l1_map(a: &Image, b: &Image) -> Result<Image> {
    a.check_same_shape(b)?;
    let inv = 1.0 / a.channels as f64;
    Ok(Image::from_fn(a.height, a.width, 1, |y, x, _| {
        (0..a.channels).map(|c| (a.get(y, x, c) - b.get(y, x, c)).abs()).sum::<f64>() * inv
    }))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut g: Vec<f64> = (0..size).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Valid-mode separable correlation of an `h×w` plane with `g ⊗ g`.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (vh, vw) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * vw];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..vw {
            tmp[y * vw + x] = g.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; vh * vw];
    for y in 0..vh {
        for (i, &gi) in g.iter().enumerate() {
            let row = &tmp[(y + i) * vw..(y + i + 1) * vw];
            for (o, r) in out[y * vw..(y + 1) * vw].iter_mut().zip(row) {
                *o += gi * r;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a `vh×vw` plane back to `h×w`.
fn filter_adjoint(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (vh, vw) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * vw];
    for y in 0..vh {
        for (i, &gi) in g.iter().enumerate() {
            let dst = &mut tmp[(y + i) * vw..(y + i + 1) * vw];
            for (d, s) in dst.iter_mut().zip(&src[y * vw..(y + 1) * vw]) {
                *d += gi * s;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..vw {
            let v = tmp[y * vw + x];
            for (i, &gi) in g.iter().enumerate() {
                out[y * w + x + i] += gi * v;
            }
        }
    }
    out
}

struct SsimStats {
    mx: Vec<f64>,
    my: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
    sxy: Vec<f64>,
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

fn ssim_stats(x: &[f64], y: &[f64], h: usize, w: usize, g: &[f64]) -> SsimStats {
    let mx = filter_valid(x, h, w, g);
    let my = filter_valid(y, h, w, g);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mut sx = filter_valid(&xx, h, w, g);
    let mut sy = filter_valid(&yy, h, w, g);
    let mut sxy = filter_valid(&xy, h, w, g);
    for i in 0..mx.len() {
        sx[i] -= mx[i] * mx[i];
        sy[i] -= my[i] * my[i];
        sxy[i] -= mx[i] * my[i];
    }
    SsimStats { mx, my, sx, sy, sxy }
}

fn check_ssim_inputs(a: &Image, b: &Image, cfg: &LossConfig) -> Result<()> {
    a.check_same_shape(b)?;
    if a.height < cfg.ssim_window || a.width < cfg.ssim_window {
        return Err(Error::TooSmall {
            height: a.height,
            width: a.width,
            window: cfg.ssim_window,
        });
    }
    Ok(())
}

fn constants(cfg: &LossConfig) -> (f64, f64) {
    ((0.01 * cfg.dynamic_range).powi(2), (0.03 * cfg.dynamic_range).powi(2))
}

pub fn ssim(a: &Image, b: &Image, cfg: &LossConfig) -> Result<f64> {
    check_ssim_inputs(a, b, cfg)?;
    let g = gaussian_window(cfg.ssim_window, cfg.ssim_sigma);
    let (c1, c2) = constants(cfg);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels {
        let s = ssim_stats(&plane(a, c), &plane(b, c), a.height, a.width, &g);
        for i in 0..s.mx.len() {
            total += (2.0 * s.mx[i] * s.my[i] + c1) * (2.0 * s.sxy[i] + c2)
                / ((s.mx[i] * s.mx[i] + s.my[i] * s.my[i] + c1) * (s.sx[i] + s.sy[i] + c2));
        }
        count += s.mx.len();
    }
    Ok(total / count as f64)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image, cfg: &LossConfig) -> Result<(f64, Image)> {
    check_ssim_inputs(a, b, cfg)?;
    let g = gaussian_window(cfg.ssim_window, cfg.ssim_sigma);
    let (c1, c2) = constants(cfg);
    let (h, w) = (a.height, a.width);
    let n_valid = (h - cfg.ssim_window + 1) * (w - cfg.ssim_window + 1);
    let norm = 1.0 / (n_valid * a.channels) as f64;
    let mut grad = Image::new(h, w, a.channels);
    let mut total = 0.0;
    for c in 0..a.channels {
        let x = plane(a, c);
        let y = plane(b, c);
        let s = ssim_stats(&x, &y, h, w, &g);
        let mut p1 = vec![0.0; n_valid];
        let mut p2 = vec![0.0; n_valid];
        let mut p3 = vec![0.0; n_valid];
        for i in 0..n_valid {
            let a1 = 2.0 * s.mx[i] * s.my[i] + c1;
            let a2 = 2.0 * s.sxy[i] + c2;
            let b1 = s.mx[i] * s.mx[i] + s.my[i] * s.my[i] + c1;
            let b2 = s.sx[i] + s.sy[i] + c2;
            let val = a1 * a2 / (b1 * b2);
            total += val;
            let d_mx = 2.0 * s.my[i] * a2 / (b1 * b2) - val * 2.0 * s.mx[i] / b1;
            let d_sx = -val / b2;
            let d_sxy = 2.0 * a1 / (b1 * b2);
            p1[i] = (d_mx - 2.0 * s.mx[i] * d_sx - s.my[i] * d_sxy) * norm;
            p2[i] = d_sx * norm;
            p3[i] = d_sxy * norm;
        }
        let q1 = filter_adjoint(&p1, h, w, &g);
        let q2 = filter_adjoint(&p2, h, w, &g);
        let q3 = filter_adjoint(&p3, h, w, &g);
        for i in 0..h * w {
            grad.data[i * a.channels + c] = q1[i] + 2.0 * x[i] * q2[i] + y[i] * q3[i];
        }
    }
    Ok((total * norm, grad))
}

pub fn combined_loss(render: &Image, gt: &Image, cfg: &LossConfig) -> Result<f64> {
    let mut loss = cfg.lambda * l1(render, gt)?;
    if cfg.uses_ssim() {
        loss += (1.0 - cfg.lambda) * (1.0 - ssim(render, gt, cfg)?);
    }
    Ok(loss)
}

/// Combined loss and its gradient with respect to `render`.
pub fn combined_loss_with_grad(render: &Image, gt: &Image, cfg: &LossConfig) -> Result<(f64, Image)> {
    render.check_same_shape(gt)?;
    let n = render.len() as f64;
    let mut grad = Image::new(render.height, render.width, render.channels);
    let mut l1_sum = 0.0;
    for ((g, r), t) in grad.data.iter_mut().zip(&render.data).zip(&gt.data) {
        let d = r - t;
        l1_sum += d.abs();
        // zero residual gets a zero subgradient
        *g = if d > 0.0 {
            cfg.lambda / n
        } else if d < 0.0 {
            -cfg.lambda / n
        } else {
            0.0
        };
    }
    let mut loss = cfg.lambda * l1_sum / n;
    if cfg.uses_ssim() {
        let (s, sg) = ssim_with_grad(render, gt, cfg)?;
        loss += (1.0 - cfg.lambda) * (1.0 - s);
        for (g, s) in grad.data.iter_mut().zip(&sg.data) {
            *g -= (1.0 - cfg.lambda) * s;
        }
    }
    Ok((loss, grad))
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// PSNR in dB for unit dynamic range; `f64::INFINITY` when the images match.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    psnr_with_range(a, b, 1.0)
}

pub fn psnr_with_range(a: &Image, b: &Image, range: f64) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / m).log10()
    })
}
