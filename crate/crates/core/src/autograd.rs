//! Analytic gradients of the batch training loss with respect to every
//! primitive parameter, and the central-difference oracle that checks them.
//!
//! The backward pass walks each pixel's fragments back to front, carrying
//! the normalized color of everything behind the current fragment so that
//! `∂c/∂a_k = T_k (ĉ_k − B_k)` needs no division by `1 − a_k`. Kernel cutoff
//! and early termination act as constant masks.

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{quat_matrix_vjp, Mat3, Vec3};
use crate::image::Image;
use crate::loss::{combined_loss, combined_loss_with_grad, LossConfig};
use crate::primitive::{flatten_params, sh_backward, siren_backward, unflatten_params, ColorHead, ColorQuery, SplatPrimitive, GEOMETRY_PARAMS};
use crate::render::{assemble, local_index, rasterize_all, recycle, render, PreparedView, RenderOptions, TileMode, TileOutput};
use crate::scene_io::View;

/// Per-primitive gradients in flatten order, plus screen-space position
/// gradient statistics for gradient-driven densification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientBundle {
    pub params: Vec<Vec<f64>>,
    /// Sum over views of `‖∂L_view/∂(NDC center)‖` for views where the primitive contributed.
    pub screen_grad_sum: Vec<f64>,
    /// Number of views in which the primitive contributed at least one fragment.
    pub visible_views: Vec<u32>,
}

impl GradientBundle {
    pub fn zeros_like(primitives: &[SplatPrimitive]) -> Self {
        GradientBundle {
            params: primitives.iter().map(|p| vec![0.0; p.param_count()]).collect(),
            screen_grad_sum: vec![0.0; primitives.len()],
            visible_views: vec![0; primitives.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|g| g.is_finite())
    }
}

/// Fault injection for negative-control tests of the gradient checker.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Drops the occlusion term of the blending derivative.
    BlendOcclusion,
}

// accumulator layout per primitive slot, after the head parameters
const MU: usize = 0;
const ROT: usize = 3;
const LS: usize = 12;
const ALPHA: usize = 14;
const DIR: usize = 15;
const FLAT: usize = 18;
const EXTRA: usize = 21;

/// Loss of a batch: the mean over views of the combined loss.
pub fn batch_loss(primitives: &[SplatPrimitive], views: &[&View], loss: &LossConfig, opts: &RenderOptions) -> Result<f64> {
    let mut total = 0.0;
    for v in views {
        let out = render(primitives, &v.camera, opts);
        total += combined_loss(&out.rgb, &v.image, loss)?;
    }
    Ok(total / views.len() as f64)
}

pub fn backward(
    primitives: &[SplatPrimitive],
    views: &[&View],
    loss: &LossConfig,
    opts: &RenderOptions,
) -> Result<(f64, GradientBundle)> {
    backward_with_fault(primitives, views, loss, opts, Fault::None)
}

/// Like [`backward`], also returning the forward render of each view.
pub fn backward_with_renders(
    primitives: &[SplatPrimitive],
    views: &[&View],
    loss: &LossConfig,
    opts: &RenderOptions,
) -> Result<(f64, GradientBundle, Vec<Image>)> {
    backward_impl(primitives, views, loss, opts, Fault::None)
}

#[doc(hidden)]
pub fn backward_with_fault(
    primitives: &[SplatPrimitive],
    views: &[&View],
    loss: &LossConfig,
    opts: &RenderOptions,
    fault: Fault,
) -> Result<(f64, GradientBundle)> {
    backward_impl(primitives, views, loss, opts, fault).map(|(l, g, _)| (l, g))
}

fn backward_impl(
    primitives: &[SplatPrimitive],
    views: &[&View],
    loss: &LossConfig,
    opts: &RenderOptions,
    fault: Fault,
) -> Result<(f64, GradientBundle, Vec<Image>)> {
    let mut renders = Vec::with_capacity(views.len());
    let mut bundle = GradientBundle::zeros_like(primitives);
    let mut total = 0.0;
    let inv_views = 1.0 / views.len() as f64;
    let stride = primitives.iter().map(|p| p.head.param_count()).max().unwrap_or(0) + EXTRA;
    for v in views {
        let view = PreparedView::new(primitives, &v.camera, opts.tile_size);
        let mode = TileMode {
            record_contribs: false,
            record_fragments: true,
            early_termination: opts.early_termination,
            background: opts.background,
        };
        let tiles = rasterize_all(&view, mode);
        let out = assemble(&view, &tiles, false);
        let (l, g_img) = combined_loss_with_grad(&out.rgb, &v.image, loss)?;
        total += l;
        renders.push(out.rgb);

        let tile_grads: Vec<Vec<f64>> = tiles
            .par_iter()
            .enumerate()
            .map(|(t, tile)| tile_backward(&view, t, tile, &g_img, stride, opts.background, fault))
            .collect();

        // merge in tile order so results do not depend on scheduling
        let mut acc = vec![0.0; primitives.len() * stride];
        let mut touched = vec![false; primitives.len()];
        for (t, tg) in tile_grads.iter().enumerate() {
            for (slot, &id) in view.grid.lists[t].iter().enumerate() {
                let src = &tg[slot * stride..(slot + 1) * stride];
                if src.iter().any(|&g| g != 0.0) {
                    touched[id as usize] = true;
                }
                let dst = &mut acc[id as usize * stride..(id as usize + 1) * stride];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            for w in tiles[t].frags.iter() {
                touched[view.grid.lists[t][w.slot as usize] as usize] = true;
            }
        }
        recycle(tiles);

        for (i, p) in primitives.iter().enumerate() {
            if !touched[i] {
                continue;
            }
            let a = &acc[i * stride..(i + 1) * stride];
            let hp = p.head.param_count();
            let ex = &a[stride - EXTRA..];
            let vp = &view.prims[i];
            let mut g = vec![0.0; p.param_count()];
            g[GEOMETRY_PARAMS..].copy_from_slice(&a[..hp]);
            let mut g_dir = Vec3::new(ex[DIR], ex[DIR + 1], ex[DIR + 2]);
            if let ColorHead::Sh(h) = &p.head {
                g_dir += sh_backward(h, vp.dir, [ex[FLAT], ex[FLAT + 1], ex[FLAT + 2]], &mut g[GEOMETRY_PARAMS..]);
            }
            let mut g_mu = Vec3::new(ex[MU], ex[MU + 1], ex[MU + 2]);
            if vp.dir_len > 0.0 {
                g_mu += (g_dir - vp.dir * vp.dir.dot(g_dir)) * (1.0 / vp.dir_len);
            }
            g[0] = g_mu.x;
            g[1] = g_mu.y;
            g[2] = g_mu.z;
            let mut g_r = Mat3::default();
            for r in 0..3 {
                for c in 0..3 {
                    g_r.m[r][c] = ex[ROT + r * 3 + c];
                }
            }
            let gq = quat_matrix_vjp(p.rot.to_array(), &g_r);
            g[3..7].copy_from_slice(&gq);
            g[7] = ex[LS];
            g[8] = ex[LS + 1];
            g[9] = ex[ALPHA] * vp.alpha * (1.0 - vp.alpha);

            let cam = &v.camera;
            let depth = cam.view_depth(p.mu);
            if depth > 0.0 {
                let right = view.cam_rot.col(0);
                let up = view.cam_rot.col(1);
                let gx = g_mu.dot(right) * depth / cam.fx * (cam.width as f64 * 0.5);
                let gy = g_mu.dot(up) * depth / cam.fy * (cam.height as f64 * 0.5);
                bundle.screen_grad_sum[i] += (gx * gx + gy * gy).sqrt();
                bundle.visible_views[i] += 1;
            }
            for (dst, s) in bundle.params[i].iter_mut().zip(&g) {
                *dst += s * inv_views;
            }
        }
    }
    Ok((total * inv_views, bundle, renders))
}

fn tile_backward(
    view: &PreparedView<'_>,
    tile: usize,
    out: &TileOutput,
    g_img: &Image,
    stride: usize,
    background: [f64; 3],
    fault: Fault,
) -> Vec<f64> {
    let list = &view.grid.lists[tile];
    let mut acc = vec![0.0; list.len() * stride];
    if out.frags.is_empty() {
        return acc;
    }
    let width = view.camera.width as usize;
    for (x, y) in view.tile_pixels(tile) {
        let li = local_index(&view.grid, width, x, y);
        let frags = &out.frags[out.frag_offsets[li]..out.frag_offsets[li + 1]];
        if frags.is_empty() {
            continue;
        }
        let pix = (y * width + x) * 3;
        let g_c = [g_img.data[pix], g_img.data[pix + 1], g_img.data[pix + 2]];
        if g_c == [0.0; 3] {
            continue;
        }
        let ray = view.ray(x, y);
        let mut behind = background;
        for f in frags.iter().rev() {
            let id = list[f.slot as usize] as usize;
            let p = &view.primitives[id];
            let vp = &view.prims[id];
            let slot = &mut acc[f.slot as usize * stride..(f.slot as usize + 1) * stride];
            let (head_acc, ex) = slot.split_at_mut(stride - EXTRA);
            let a = vp.alpha * f.kernel;
            let w = a * f.t_before;
            let g_color = [g_c[0] * w, g_c[1] * w, g_c[2] * w];
            let occlusion = match fault {
                Fault::None => 1.0,
                Fault::BlendOcclusion => 0.0,
            };
            let mut g_a = 0.0;
            for ch in 0..3 {
                g_a += g_c[ch] * (f.color[ch] - occlusion * behind[ch]);
                behind[ch] = f.color[ch] * a + (1.0 - a) * behind[ch];
            }
            g_a *= f.t_before;
            ex[ALPHA] += g_a * f.kernel;
            let g_kernel = g_a * vp.alpha;
            let mut g_u = -g_kernel * f.kernel * f.hit.u;
            let mut g_v = -g_kernel * f.kernel * f.hit.v;

            match &p.head {
                ColorHead::Siren(h) => {
                    let q = ColorQuery {
                        u: f.hit.u,
                        v: f.hit.v,
                        dir: vp.dir,
                    };
                    let at = f.act_at as usize;
                    let (phase, sin) = out.acts[at..at + 2 * h.hidden].split_at(h.hidden);
                    let gq = siren_backward(h, &q, phase, sin, f.color, g_color, &mut head_acc[..h.param_count()]);
                    g_u += gq.u;
                    g_v += gq.v;
                    ex[DIR] += gq.dir.x;
                    ex[DIR + 1] += gq.dir.y;
                    ex[DIR + 2] += gq.dir.z;
                }
                ColorHead::Sh(_) => {
                    for ch in 0..3 {
                        ex[FLAT + ch] += g_color[ch];
                    }
                }
            }

            // u = (a_x + t d_x)/s_u, v = (a_y + t d_y)/s_v, t = −a_z/d_z
            let hit = &f.hit;
            let g_pu = g_u / vp.scale.x;
            let g_pv = g_v / vp.scale.y;
            ex[LS] -= g_u * hit.u;
            ex[LS + 1] -= g_v * hit.v;
            let g_t = g_pu * hit.d.x + g_pv * hit.d.y;
            let g_al = Vec3::new(g_pu, g_pv, -g_t / hit.d.z);
            let g_dl = Vec3::new(g_pu * hit.t, g_pv * hit.t, -g_t * hit.t / hit.d.z);
            let aw = ray.origin - p.mu;
            let dw = ray.direction;
            for r in 0..3 {
                for c in 0..3 {
                    ex[ROT + r * 3 + c] += aw[r] * g_al[c] + dw[r] * g_dl[c];
                }
            }
            let g_mu = vp.rot.mul_vec(g_al);
            ex[MU] -= g_mu.x;
            ex[MU + 1] -= g_mu.y;
            ex[MU + 2] -= g_mu.z;
        }
    }
    acc
}

/// Central differences of an arbitrary scalar function.
pub fn central_differences(f: impl Fn(&[f64]) -> f64 + Sync, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut p = x.to_vec();
            p[i] += h;
            let mut m = x.to_vec();
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient of [`batch_loss`], one full re-render per evaluation.
pub fn finite_diff_oracle(
    primitives: &[SplatPrimitive],
    views: &[&View],
    loss: &LossConfig,
    opts: &RenderOptions,
    h: f64,
) -> Result<GradientBundle> {
    let flat: Vec<Vec<f64>> = primitives.iter().map(flatten_params).collect();
    let offsets: Vec<usize> = flat
        .iter()
        .scan(0, |acc, v| {
            let o = *acc;
            *acc += v.len();
            Some(o)
        })
        .collect();
    let all: Vec<f64> = flat.concat();
    // validate once up front so the closure can unwrap
    batch_loss(primitives, views, loss, opts)?;
    let eval = |x: &[f64]| {
        let prims: Vec<SplatPrimitive> = primitives
            .iter()
            .enumerate()
            .map(|(i, p)| unflatten_params(&x[offsets[i]..offsets[i] + flat[i].len()], p).expect("layout"))
            .collect();
        batch_loss(&prims, views, loss, opts).expect("validated")
    };
    let g = central_differences(eval, &all, h);
    let mut bundle = GradientBundle::zeros_like(primitives);
    for (i, dst) in bundle.params.iter_mut().enumerate() {
        dst.copy_from_slice(&g[offsets[i]..offsets[i] + flat[i].len()]);
    }
    Ok(bundle)
}
