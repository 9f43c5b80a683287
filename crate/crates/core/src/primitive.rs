//! Splat primitives and their color heads.
//!
//! A primitive's parameters flatten to
//! `[mu(3), rot(4), log_scale(2), raw_opacity(1), head...]`; the SIREN head
//! contributes `W` (row-major `hidden × d_in`), `b`, `Wbar` (row-major
//! `3 × hidden`) and `bbar` in that order, the SH head its `3 × (deg+1)²`
//! coefficient table with the channel as the slow axis. This layout is also
//! the per-vertex property order of checkpoints.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{UnitQuaternion, Vec2, Vec3};

/// Number of geometry scalars ahead of the head parameters.
pub const GEOMETRY_PARAMS: usize = 10;
pub const MAX_HIDDEN: usize = 64;
pub const DEFAULT_OMEGA0: f64 = 30.0;
pub const DEFAULT_HIDDEN: usize = 6;

pub(crate) const SH_C0: f64 = 0.28209479177387814;
pub(crate) const SH_C1: f64 = 0.4886025119029199;
pub(crate) const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
pub(crate) const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn inverse_sigmoid(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Single-hidden-layer sinusoidal MLP: `sigmoid(Wbar · sin(ω₀(W y + b)) + bbar)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirenHead {
    pub d_in: usize,
    pub hidden: usize,
    pub omega0: f64,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub wbar: Vec<f64>,
    pub bbar: [f64; 3],
}

impl SirenHead {
    pub fn zeros(d_in: usize, hidden: usize, omega0: f64) -> Self {
        assert!(d_in == 2 || d_in == 5, "SIREN input must be (u,v) or (u,v,dir), got {d_in}");
        assert!((1..=MAX_HIDDEN).contains(&hidden), "hidden width {hidden} out of range");
        SirenHead {
            d_in,
            hidden,
            omega0,
            w: vec![0.0; hidden * d_in],
            b: vec![0.0; hidden],
            wbar: vec![0.0; 3 * hidden],
            bbar: [0.0; 3],
        }
    }

    pub fn param_count(&self) -> usize {
        siren_param_count(self.d_in, self.hidden)
    }

    pub fn view_dependent(&self) -> bool {
        self.d_in == 5
    }
}

pub fn siren_param_count(d_in: usize, hidden: usize) -> usize {
    hidden * d_in + hidden + 3 * hidden + 3
}

/// Real spherical-harmonic color, `clamp(0.5 + Σ c·Y(dir), 0, 1)` per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShHead {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl ShHead {
    pub fn zeros(degree: usize) -> Self {
        assert!(degree <= 3, "SH degree {degree} > 3");
        ShHead {
            degree,
            coeffs: vec![0.0; 3 * sh_coeff_count(degree)],
        }
    }

    pub fn param_count(&self) -> usize {
        self.coeffs.len()
    }
}

pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColorHead {
    Siren(SirenHead),
    Sh(ShHead),
}

impl ColorHead {
    pub fn param_count(&self) -> usize {
        match self {
            ColorHead::Siren(h) => h.param_count(),
            ColorHead::Sh(h) => h.param_count(),
        }
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            ColorHead::Siren(h) => {
                out.extend_from_slice(&h.w);
                out.extend_from_slice(&h.b);
                out.extend_from_slice(&h.wbar);
                out.extend_from_slice(&h.bbar);
            }
            ColorHead::Sh(h) => out.extend_from_slice(&h.coeffs),
        }
    }

    pub fn read_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                got: src.len(),
            });
        }
        match self {
            ColorHead::Siren(h) => {
                let (w, rest) = src.split_at(h.w.len());
                let (b, rest) = rest.split_at(h.b.len());
                let (wbar, bbar) = rest.split_at(h.wbar.len());
                h.w.copy_from_slice(w);
                h.b.copy_from_slice(b);
                h.wbar.copy_from_slice(wbar);
                h.bbar.copy_from_slice(bbar);
            }
            ColorHead::Sh(h) => h.coeffs.copy_from_slice(src),
        }
        Ok(())
    }
}

/// Shape of a color head, without its weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Siren { d_in: usize, hidden: usize },
    Sh { degree: usize },
}

impl HeadKind {
    pub fn param_count(&self) -> usize {
        match *self {
            HeadKind::Siren { d_in, hidden } => siren_param_count(d_in, hidden),
            HeadKind::Sh { degree } => 3 * sh_coeff_count(degree),
        }
    }

    pub fn of(head: &ColorHead) -> HeadKind {
        match head {
            ColorHead::Siren(h) => HeadKind::Siren {
                d_in: h.d_in,
                hidden: h.hidden,
            },
            ColorHead::Sh(h) => HeadKind::Sh { degree: h.degree },
        }
    }

    pub fn zeroed(&self, omega0: f64) -> ColorHead {
        match *self {
            HeadKind::Siren { d_in, hidden } => ColorHead::Siren(SirenHead::zeros(d_in, hidden, omega0)),
            HeadKind::Sh { degree } => ColorHead::Sh(ShHead::zeros(degree)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplatPrimitive {
    pub mu: Vec3,
    /// Stored unnormalized; every consumer normalizes.
    pub rot: UnitQuaternion,
    pub log_scale: Vec2,
    pub raw_opacity: f64,
    pub head: ColorHead,
}

impl SplatPrimitive {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.raw_opacity)
    }

    pub fn set_opacity(&mut self, alpha: f64) {
        self.raw_opacity = inverse_sigmoid(alpha);
    }

    pub fn scale(&self) -> Vec2 {
        Vec2::new(self.log_scale.x.exp(), self.log_scale.y.exp())
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale.x.max(self.log_scale.y).exp()
    }

    pub fn param_count(&self) -> usize {
        GEOMETRY_PARAMS + self.head.param_count()
    }

    pub fn head_kind(&self) -> HeadKind {
        HeadKind::of(&self.head)
    }

    pub fn is_finite(&self) -> bool {
        let mut v = Vec::new();
        flatten_into(self, &mut v);
        v.iter().all(|x| x.is_finite())
    }
}

pub fn flatten_params(p: &SplatPrimitive) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.param_count());
    flatten_into(p, &mut out);
    out
}

pub fn flatten_into(p: &SplatPrimitive, out: &mut Vec<f64>) {
    out.extend_from_slice(&p.mu.to_array());
    out.extend_from_slice(&p.rot.to_array());
    out.extend_from_slice(&[p.log_scale.x, p.log_scale.y, p.raw_opacity]);
    p.head.write_params(out);
}

/// Rebuilds a primitive whose head has the shape of `template`'s head.
pub fn unflatten_params(v: &[f64], template: &SplatPrimitive) -> Result<SplatPrimitive> {
    unflatten_with_head(v, template.head.clone())
}

pub fn unflatten_with_head(v: &[f64], mut head: ColorHead) -> Result<SplatPrimitive> {
    let expected = GEOMETRY_PARAMS + head.param_count();
    if v.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: v.len(),
        });
    }
    head.read_params(&v[GEOMETRY_PARAMS..])?;
    Ok(SplatPrimitive {
        mu: Vec3::new(v[0], v[1], v[2]),
        rot: UnitQuaternion {
            w: v[3],
            x: v[4],
            y: v[5],
            z: v[6],
        },
        log_scale: Vec2::new(v[7], v[8]),
        raw_opacity: v[9],
        head,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorQuery {
    pub u: f64,
    pub v: f64,
    pub dir: Vec3,
}

/// Hidden-layer activations kept for the backward pass: the scaled
/// pre-activation `ω₀·z` and its sine. The cosine is only needed going
/// backwards, so it is computed there.
#[derive(Clone, Copy, Debug)]
pub struct SirenCache {
    pub phase: [f64; MAX_HIDDEN],
    pub sin: [f64; MAX_HIDDEN],
}

impl Default for SirenCache {
    fn default() -> Self {
        SirenCache {
            phase: [0.0; MAX_HIDDEN],
            sin: [0.0; MAX_HIDDEN],
        }
    }
}

#[inline]
fn siren_input(head: &SirenHead, q: &ColorQuery) -> [f64; 5] {
    let _ = head;
    [q.u, q.v, q.dir.x, q.dir.y, q.dir.z]
}

pub fn siren_color(head: &SirenHead, q: &ColorQuery) -> [f64; 3] {
    let mut cache = SirenCache::default();
    siren_forward(head, q, &mut cache)
}

/// Evaluates the head and records the hidden activations.
pub fn siren_forward(head: &SirenHead, q: &ColorQuery, cache: &mut SirenCache) -> [f64; 3] {
    // constant widths let the common shapes unroll
    match (head.d_in, head.hidden) {
        (5, 6) => forward_sized(head, q, cache, 5, 6),
        (2, 6) => forward_sized(head, q, cache, 2, 6),
        (d, h) => forward_sized(head, q, cache, d, h),
    }
}

#[inline(always)]
fn forward_sized(head: &SirenHead, q: &ColorQuery, cache: &mut SirenCache, d: usize, h: usize) -> [f64; 3] {
    let y = siren_input(head, q);
    let y = &y[..d];
    for (j, row) in head.w.chunks_exact(d).enumerate().take(h) {
        let mut z = head.b[j];
        for k in 0..d {
            z += row[k] * y[k];
        }
        let phase = head.omega0 * z;
        cache.phase[j] = phase;
        cache.sin[j] = phase.sin();
    }
    let sin = &cache.sin[..h];
    let mut out = [0.0; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let row = &head.wbar[ch * h..(ch + 1) * h];
        let mut pre = head.bbar[ch];
        for j in 0..h {
            pre += row[j] * sin[j];
        }
        *o = sigmoid(pre);
    }
    out
}

/// Gradient of the SIREN output with respect to its inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QueryGrad {
    pub u: f64,
    pub v: f64,
    pub dir: Vec3,
}

/// Accumulates `∂/∂θ` into `grad` (head slice in flatten order) given the
/// upstream gradient on the output color; returns the input gradient.
/// `phase` and `sin` are the first `hidden` entries recorded by [`siren_forward`].
pub fn siren_backward(
    head: &SirenHead,
    q: &ColorQuery,
    phase: &[f64],
    sin: &[f64],
    color: [f64; 3],
    g_color: [f64; 3],
    grad: &mut [f64],
) -> QueryGrad {
    match (head.d_in, head.hidden) {
        (5, 6) => backward_sized(head, q, phase, sin, color, g_color, grad, 5, 6),
        (2, 6) => backward_sized(head, q, phase, sin, color, g_color, grad, 2, 6),
        (d, h) => backward_sized(head, q, phase, sin, color, g_color, grad, d, h),
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn backward_sized(
    head: &SirenHead,
    q: &ColorQuery,
    phase: &[f64],
    sin: &[f64],
    color: [f64; 3],
    g_color: [f64; 3],
    grad: &mut [f64],
    d: usize,
    h: usize,
) -> QueryGrad {
    let (phase, sin) = (&phase[..h], &sin[..h]);
    let y = siren_input(head, q);
    let y = &y[..d];
    let (gw, rest) = grad.split_at_mut(h * d);
    let (gb, rest) = rest.split_at_mut(h);
    let (gwbar, gbbar) = rest.split_at_mut(3 * h);
    let mut g_s = [0.0; MAX_HIDDEN];
    let g_s = &mut g_s[..h];
    for ch in 0..3 {
        let g_pre = g_color[ch] * color[ch] * (1.0 - color[ch]);
        gbbar[ch] += g_pre;
        let gwbar = &mut gwbar[ch * h..(ch + 1) * h];
        let wbar = &head.wbar[ch * h..(ch + 1) * h];
        for j in 0..h {
            gwbar[j] += g_pre * sin[j];
            g_s[j] += wbar[j] * g_pre;
        }
    }
    let mut g_y = [0.0; 5];
    let g_y_in = &mut g_y[..d];
    let rows = gw.chunks_exact_mut(d).zip(head.w.chunks_exact(d));
    for (j, (gw_row, w_row)) in rows.enumerate() {
        let g_z = g_s[j] * head.omega0 * phase[j].cos();
        gb[j] += g_z;
        for k in 0..d {
            gw_row[k] += g_z * y[k];
            g_y_in[k] += w_row[k] * g_z;
        }
    }
    QueryGrad {
        u: g_y[0],
        v: g_y[1],
        dir: Vec3::new(g_y[2], g_y[3], g_y[4]),
    }
}

/// Real SH basis values in the usual graphics sign convention, `(deg+1)²` entries.
pub fn sh_basis(degree: usize, dir: Vec3) -> [f64; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Jacobian of [`sh_basis`] with respect to the (unnormalized) direction components.
pub fn sh_basis_jacobian(degree: usize, dir: Vec3) -> [[f64; 3]; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut j = [[0.0; 3]; 16];
    if degree >= 1 {
        j[1] = [0.0, -SH_C1, 0.0];
        j[2] = [0.0, 0.0, SH_C1];
        j[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        j[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        j[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        j[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        j[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        j[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
        if degree >= 3 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            j[9] = [SH_C3[0] * 6.0 * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
            j[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
            j[11] = [
                -2.0 * SH_C3[2] * x * y,
                SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
                8.0 * SH_C3[2] * y * z,
            ];
            j[12] = [
                -6.0 * SH_C3[3] * x * z,
                -6.0 * SH_C3[3] * y * z,
                SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            j[13] = [
                SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
                -2.0 * SH_C3[4] * x * y,
                8.0 * SH_C3[4] * x * z,
            ];
            j[14] = [2.0 * SH_C3[5] * x * z, -2.0 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)];
            j[15] = [SH_C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * SH_C3[6] * x * y, 0.0];
        }
    }
    j
}

/// Unclamped `0.5 + Σ c·Y` per channel.
pub fn sh_color_raw(head: &ShHead, dir: Vec3) -> [f64; 3] {
    let n = sh_coeff_count(head.degree);
    let basis = sh_basis(head.degree, dir);
    let mut out = [0.5; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        *o += head.coeffs[ch * n..(ch + 1) * n].iter().zip(&basis[..n]).map(|(c, b)| c * b).sum::<f64>();
    }
    out
}

pub fn sh_color(head: &ShHead, dir: Vec3) -> [f64; 3] {
    sh_color_raw(head, dir).map(|c| c.clamp(0.0, 1.0))
}

/// Backward through [`sh_color`]; clamped channels pass no gradient.
/// Returns the gradient with respect to `dir`.
pub fn sh_backward(head: &ShHead, dir: Vec3, g_color: [f64; 3], grad: &mut [f64]) -> Vec3 {
    let n = sh_coeff_count(head.degree);
    let basis = sh_basis(head.degree, dir);
    let jac = sh_basis_jacobian(head.degree, dir);
    let raw = sh_color_raw(head, dir);
    let mut g_dir = [0.0; 3];
    for ch in 0..3 {
        if !(raw[ch] > 0.0 && raw[ch] < 1.0) {
            continue;
        }
        let g = g_color[ch];
        for i in 0..n {
            grad[ch * n + i] += g * basis[i];
            let c = head.coeffs[ch * n + i];
            for (k, gd) in g_dir.iter_mut().enumerate() {
                *gd += g * c * jac[i][k];
            }
        }
    }
    Vec3::from_array(g_dir)
}

pub fn head_color(head: &ColorHead, q: &ColorQuery) -> [f64; 3] {
    match head {
        ColorHead::Siren(h) => siren_color(h, q),
        ColorHead::Sh(h) => sh_color(h, q.dir),
    }
}

/// SIREN initialization: first layer `U(±1/d_in)`, output layer
/// `U(±√(6/hidden)/ω₀)`, output bias zero.
pub fn init_siren<R: Rng + ?Sized>(rng: &mut R, d_in: usize, hidden: usize, omega0: f64) -> SirenHead {
    let mut head = SirenHead::zeros(d_in, hidden, omega0);
    let first = 1.0 / d_in as f64;
    let out = (6.0 / hidden as f64).sqrt() / omega0;
    for w in head.w.iter_mut() {
        *w = rng.random_range(-first..first);
    }
    for b in head.b.iter_mut() {
        *b = rng.random_range(-first..first);
    }
    for w in head.wbar.iter_mut() {
        *w = rng.random_range(-out..out);
    }
    head
}
