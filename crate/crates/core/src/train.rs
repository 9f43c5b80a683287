//! Optimization loop: Adam with per-group learning rates, one random view
//! per step, periodic densification and the gradual opacity reset.
//!
//! Everything random (view order, densification samples, jitter) draws from
//! one ChaCha8 stream seeded by `TrainConfig::seed`, and tile work is merged
//! in a fixed order, so a run is reproducible bit for bit.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::backward_with_renders;
use crate::densify::{self, gradient_based_scores, score_round, select_candidates, DensifyConfig, DensifyEvent, Strategy};
use crate::error::{Error, Result};
use crate::geometry::{Camera, UnitQuaternion, Vec2, Vec3};
use crate::loss::{psnr, LossConfig};
use crate::primitive::{flatten_into, init_siren, inverse_sigmoid, unflatten_with_head, ColorHead, HeadKind, ShHead, SplatPrimitive, DEFAULT_HIDDEN, DEFAULT_OMEGA0};
use crate::render::RenderOptions;
use crate::scene_io::View;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Initial position rate, multiplied by the scene extent.
    pub position: f64,
    /// Final position rate after exponential decay, multiplied by the scene extent.
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub head: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            head: 2.5e-3,
        }
    }
}

impl LearningRates {
    /// Log-linear interpolation from `position` to `position_final`.
    pub fn position_at(&self, iteration: usize, total: usize) -> f64 {
        let r = if total <= 1 { 0.0 } else { (iteration as f64 / total as f64).clamp(0.0, 1.0) };
        (self.position.ln() * (1.0 - r) + self.position_final.ln() * r).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// `"siren"` or `"sh"`.
    pub head: String,
    pub d_in: usize,
    pub hidden: usize,
    pub omega0: f64,
    pub sh_degree: usize,
    pub opacity: f64,
    /// Uniformly random orientations; otherwise every splat starts in the xy plane.
    pub random_rotation: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            head: "siren".into(),
            d_in: 5,
            hidden: DEFAULT_HIDDEN,
            omega0: DEFAULT_OMEGA0,
            sh_degree: 3,
            opacity: 0.5,
            random_rotation: true,
        }
    }
}

impl InitConfig {
    pub fn head_kind(&self) -> Result<HeadKind> {
        match self.head.as_str() {
            "siren" => Ok(HeadKind::Siren {
                d_in: self.d_in,
                hidden: self.hidden,
            }),
            "sh" => Ok(HeadKind::Sh { degree: self.sh_degree }),
            other => Err(Error::Config(format!("unknown head `{other}` (expected siren or sh)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.head_kind()? {
            HeadKind::Siren { d_in, hidden } if !(d_in == 2 || d_in == 5) || hidden == 0 || hidden > 64 => {
                Err(Error::Config(format!("unsupported SIREN shape d_in={d_in} hidden={hidden}")))
            }
            HeadKind::Sh { degree } if degree > 3 => Err(Error::Config(format!("SH degree {degree} > 3"))),
            _ if !(self.opacity > 0.0 && self.opacity < 1.0) => Err(Error::Config("init.opacity must be in (0, 1)".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub densify: DensifyConfig,
    pub init: InitConfig,
    pub background: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            seed: 0,
            checkpoint_every: 0,
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            densify: DensifyConfig::default(),
            init: InitConfig::default(),
            background: [0.0; 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        if [lr.position, lr.position_final, lr.rotation, lr.scale, lr.opacity, lr.head].iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config("all learning rates must be > 0".into()));
        }
        self.loss.validate()?;
        self.densify.validate()?;
        self.init.validate()
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            background: self.background,
            ..Default::default()
        }
    }
}

/// First and second moments per primitive, parallel to the flattened
/// parameters, plus one global step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(primitives: &[SplatPrimitive]) -> Self {
        AdamState {
            m: primitives.iter().map(|p| vec![0.0; p.param_count()]).collect(),
            v: primitives.iter().map(|p| vec![0.0; p.param_count()]).collect(),
            step: 0,
        }
    }

    /// Carries rows over by `origin`; `None` rows start at zero.
    pub fn remap(&self, origin: &[Option<usize>], primitives: &[SplatPrimitive]) -> Self {
        let pick = |src: &Vec<Vec<f64>>| {
            origin
                .iter()
                .zip(primitives)
                .map(|(o, p)| o.map_or_else(|| vec![0.0; p.param_count()], |i| src[i].clone()))
                .collect()
        };
        AdamState {
            m: pick(&self.m),
            v: pick(&self.v),
            step: self.step,
        }
    }
}

/// One bias-corrected Adam update of a scalar at step `t` (1-based).
#[inline]
pub fn adam_update(x: &mut f64, g: f64, m: &mut f64, v: &mut f64, t: u64, lr: f64, cfg: &AdamConfig) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let mh = *m / (1.0 - cfg.beta1.powi(t as i32));
    let vh = *v / (1.0 - cfg.beta2.powi(t as i32));
    *x -= lr * mh / (vh.sqrt() + cfg.eps);
}

/// Rate for flattened parameter index `i`.
pub fn group_rate(i: usize, position: f64, lr: &LearningRates) -> f64 {
    match i {
        0..3 => position,
        3..7 => lr.rotation,
        7..9 => lr.scale,
        9 => lr.opacity,
        _ => lr.head,
    }
}

/// Updates every primitive in place, then renormalizes its quaternion.
pub fn adam_step(
    primitives: &mut [SplatPrimitive],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    position_lr: f64,
    lr: &LearningRates,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let mut flat = Vec::new();
    for (k, p) in primitives.iter_mut().enumerate() {
        flat.clear();
        flatten_into(p, &mut flat);
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..flat.len() {
            adam_update(&mut flat[i], grads[k][i], &mut m[i], &mut v[i], t, group_rate(i, position_lr, lr), cfg);
        }
        let mut q = unflatten_with_head(&flat, p.head.clone())?;
        if q.rot.norm() > 0.0 {
            q.rot = q.rot.normalized();
        }
        *p = q;
    }
    Ok(())
}

/// 1.1 × the radius of the camera-center bounding sphere. With a single
/// camera position the radius is the distance to the `fallback_center`.
pub fn scene_extent(cameras: &[Camera], fallback_center: Vec3) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let n = cameras.len() as f64;
    let center = cameras.iter().fold(Vec3::ZERO, |a, c| a + c.position) * (1.0 / n);
    let radius = cameras.iter().map(|c| (c.position - center).norm()).fold(0.0, f64::max);
    let radius = if radius > 1e-6 { radius } else { (cameras[0].position - fallback_center).norm() };
    1.1 * radius.max(1e-6)
}

fn centroid(points: impl Iterator<Item = Vec3>) -> Vec3 {
    let (sum, n) = points.fold((Vec3::ZERO, 0usize), |(s, n), p| (s + p, n + 1));
    if n == 0 {
        Vec3::ZERO
    } else {
        sum * (1.0 / n as f64)
    }
}

/// Mean distance to the (up to) three nearest other points.
pub fn knn_scales(points: &[Vec3]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (*p - *q).norm();
                if d < best[2] {
                    best[2] = d;
                    best.sort_by(|a, b| a.total_cmp(b));
                }
            }
            let found: Vec<f64> = best.iter().cloned().filter(|d| d.is_finite()).collect();
            if found.is_empty() {
                0.1
            } else {
                found.iter().sum::<f64>() / found.len() as f64
            }
        })
        .collect()
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            return UnitQuaternion::from_array(q);
        }
    }
}

/// One primitive per point, isotropic kNN scale, fixed opacity.
pub fn init_scene(points: &[Vec3], cfg: &InitConfig, rng: &mut ChaCha8Rng) -> Result<Vec<SplatPrimitive>> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let kind = cfg.head_kind()?;
    let scales = knn_scales(points);
    Ok(points
        .iter()
        .zip(scales)
        .map(|(&mu, s)| {
            let rot = if cfg.random_rotation { random_rotation(rng) } else { UnitQuaternion::IDENTITY };
            let head = match kind {
                HeadKind::Siren { d_in, hidden } => ColorHead::Siren(init_siren(rng, d_in, hidden, cfg.omega0)),
                HeadKind::Sh { degree } => ColorHead::Sh(ShHead::zeros(degree)),
            };
            let ls = s.max(1e-7).ln();
            SplatPrimitive {
                mu,
                rot,
                log_scale: Vec2::new(ls, ls),
                raw_opacity: inverse_sigmoid(cfg.opacity),
                head,
            }
        })
        .collect())
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iter: usize,
    pub loss: f64,
    /// `None` for an exact reconstruction.
    pub psnr: Option<f64>,
    pub n_primitives: usize,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub metrics: StepMetrics,
    pub densify: Option<DensifyEvent>,
    pub checkpoint_due: bool,
}

/// Training state; call [`Trainer::step`] until [`Trainer::done`].
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub views: Vec<&'a View>,
    pub primitives: Vec<SplatPrimitive>,
    pub adam: AdamState,
    pub iteration: usize,
    pub extent: f64,
    pub rounds: usize,
    rng: ChaCha8Rng,
    grad_sum: Vec<f64>,
    grad_visible: Vec<u32>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    /// `rng` continues the stream used to initialize the primitives.
    pub fn new(primitives: Vec<SplatPrimitive>, views: Vec<&'a View>, cfg: TrainConfig, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        if views.is_empty() {
            return Err(Error::Config("training needs at least one view".into()));
        }
        let cams: Vec<Camera> = views.iter().map(|v| v.camera).collect();
        let extent = scene_extent(&cams, centroid(primitives.iter().map(|p| p.mu)));
        let n = primitives.len();
        Ok(Trainer {
            adam: AdamState::new(&primitives),
            cfg,
            views,
            primitives,
            iteration: 0,
            extent,
            rounds: 0,
            rng,
            grad_sum: vec![0.0; n],
            grad_visible: vec![0; n],
            started: Instant::now(),
        })
    }

    pub fn done(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let view = self.views[self.rng.random_range(0..self.views.len())];
        let opts = self.cfg.render_options();
        let (loss, grads, renders) = backward_with_renders(&self.primitives, &[view], &self.cfg.loss, &opts)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: self.iteration });
        }
        let psnr = psnr(&renders[0], &view.image)?;
        for (i, (s, n)) in grads.screen_grad_sum.iter().zip(&grads.visible_views).enumerate() {
            self.grad_sum[i] += s;
            self.grad_visible[i] += n;
        }
        let pos_lr = self.cfg.lr.position_at(self.iteration, self.cfg.iterations) * self.extent;
        adam_step(&mut self.primitives, &grads.params, &mut self.adam, pos_lr, &self.cfg.lr, &self.cfg.adam)?;
        self.iteration += 1;

        let it = self.iteration;
        let d = &self.cfg.densify;
        let densify = if it.is_multiple_of(d.interval) && it < d.until(self.cfg.iterations) {
            Some(self.densify_round()?)
        } else {
            None
        };
        let every = self.cfg.checkpoint_every;
        Ok(StepReport {
            metrics: StepMetrics {
                iter: it,
                loss,
                psnr: psnr.is_finite().then_some(psnr),
                n_primitives: self.primitives.len(),
                wall_ms: self.started.elapsed().as_millis() as u64,
            },
            densify,
            checkpoint_due: (every > 0 && it.is_multiple_of(every)) || it == self.cfg.iterations,
        })
    }

    fn sample_views(&mut self) -> Vec<&'a View> {
        let n = self.views.len();
        let k = self.cfg.densify.views_per_round.min(n).max(1);
        let mut idx = sample(&mut self.rng, n, k).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| self.views[i]).collect()
    }

    /// Scores, clones/splits, prunes, and applies the opacity reset when due.
    pub fn densify_round(&mut self) -> Result<DensifyEvent> {
        self.rounds += 1;
        let cfg = self.cfg.densify.clone();
        let scores = match cfg.strategy {
            Strategy::GradientBased => gradient_based_scores(&self.grad_sum, &self.grad_visible),
            _ => {
                let sample = self.sample_views();
                score_round(&self.primitives, &sample, &self.cfg.render_options(), &cfg)?
            }
        };
        let candidates = select_candidates(&scores, cfg.active_threshold(), cfg.max_primitives, self.primitives.len());
        let m = densify::densify(&self.primitives, &candidates, self.extent, &cfg, &mut self.rng);
        let m = densify::prune(m, self.extent, &cfg);
        self.adam = self.adam.remap(&m.origin, &m.primitives);
        self.primitives = m.primitives;
        self.grad_sum = vec![0.0; self.primitives.len()];
        self.grad_visible = vec![0; self.primitives.len()];
        if cfg.reset_active(self.rounds) {
            densify::gradual_opacity_reset(&mut self.primitives, cfg.reset_target, cfg.reset_keep);
        }
        Ok(DensifyEvent {
            iteration: self.iteration,
            strategy: cfg.strategy,
            candidates: candidates.len(),
            clones: m.clones,
            splits: m.splits,
            pruned: m.pruned,
            count_after: self.primitives.len(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub primitives: Vec<SplatPrimitive>,
    pub metrics: Vec<StepMetrics>,
    pub densify_log: Vec<DensifyEvent>,
    pub extent: f64,
}

/// Initializes from `points` and trains on `views`.
pub fn train_from_points(points: &[Vec3], views: &[&View], cfg: &TrainConfig) -> Result<TrainResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prims = init_scene(points, &cfg.init, &mut rng)?;
    train(prims, views, cfg, rng)
}

pub fn train(primitives: Vec<SplatPrimitive>, views: &[&View], cfg: &TrainConfig, rng: ChaCha8Rng) -> Result<TrainResult> {
    let mut t = Trainer::new(primitives, views.to_vec(), cfg.clone(), rng)?;
    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut densify_log = Vec::new();
    while !t.done() {
        let r = t.step()?;
        metrics.push(r.metrics);
        densify_log.extend(r.densify);
    }
    Ok(TrainResult {
        primitives: t.primitives,
        metrics,
        densify_log,
        extent: t.extent,
    })
}

/// Mean PSNR of `primitives` over `views`.
pub fn mean_psnr(primitives: &[SplatPrimitive], views: &[&View], opts: &RenderOptions) -> Result<f64> {
    let mut total = 0.0;
    for v in views {
        let out = crate::render::render(primitives, &v.camera, opts);
        total += psnr(&out.rgb, &v.image)?;
    }
    Ok(total / views.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::render::tests::frontal_camera;

    #[test]
    fn first_adam_step_is_lr() {
        let cfg = AdamConfig::default();
        let (mut x, mut m, mut v) = (0.0, 0.0, 0.0);
        adam_update(&mut x, 1.0, &mut m, &mut v, 1, 0.01, &cfg);
        assert!((x + 0.01 / (1.0 + 1e-15)).abs() < 1e-15);
        let (mut y, mut m, mut v) = (0.3, 0.0, 0.0);
        adam_update(&mut y, 0.0, &mut m, &mut v, 1, 0.01, &cfg);
        assert_eq!(y, 0.3);
    }

    #[test]
    fn adam_matches_scalar_reference_on_quadratic() {
        // f(x) = 2 (x - 1)^2, reference Adam written out longhand
        let cfg = AdamConfig { eps: 1e-8, ..Default::default() };
        let (mut x, mut m, mut v) = (3.0, 0.0, 0.0);
        let (mut rx, mut rm, mut rv) = (3.0f64, 0.0f64, 0.0f64);
        for t in 1..=5u64 {
            let gx = 4.0 * (x - 1.0);
            adam_update(&mut x, gx, &mut m, &mut v, t, 0.1, &cfg);
            let g = 4.0 * (rx - 1.0);
            rm = 0.9 * rm + 0.1 * g;
            rv = 0.999 * rv + 0.001 * g * g;
            let mhat = rm / (1.0 - 0.9f64.powf(t as f64));
            let vhat = rv / (1.0 - 0.999f64.powf(t as f64));
            rx -= 0.1 * mhat / (vhat.sqrt() + 1e-8);
            assert!((x - rx).abs() < 1e-12);
        }
    }

    #[test]
    fn position_rate_decays_log_linearly() {
        let lr = LearningRates::default();
        assert!((lr.position_at(0, 100) - 1.6e-4).abs() < 1e-18);
        assert!((lr.position_at(100, 100) - 1.6e-6).abs() < 1e-18);
        assert!((lr.position_at(50, 100) - 1.6e-5).abs() < 1e-17);
    }

    #[test]
    fn init_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = init_scene(&[Vec3::new(1.0, 2.0, 3.0)], &InitConfig::default(), &mut rng).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0].opacity() - 0.5).abs() < 1e-15);
        assert_eq!(init_scene(&[], &InitConfig::default(), &mut rng).unwrap_err(), Error::EmptyPointSet);

        let s = 0.25;
        let grid: Vec<Vec3> = (0..8).flat_map(|i| (0..8).map(move |j| Vec3::new(i as f64 * s, j as f64 * s, 0.0))).collect();
        let prims = init_scene(&grid, &InitConfig::default(), &mut rng).unwrap();
        for p in &prims {
            assert!((p.max_scale() - s).abs() < 0.2 * s);
        }
        // brute-force oracle
        let scales = knn_scales(&grid);
        for (i, p) in grid.iter().enumerate() {
            let mut d: Vec<f64> = grid.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| (*p - *q).norm()).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((scales[i] - (d[0] + d[1] + d[2]) / 3.0).abs() < 1e-12);
        }

        let a = init_scene(&grid, &InitConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = init_scene(&grid, &InitConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extent_of_camera_ring() {
        let cams: Vec<Camera> = (0..4)
            .map(|i| {
                let a = i as f64 * std::f64::consts::FRAC_PI_2;
                Camera::look_at(Vec3::new(2.0 * a.cos(), 0.0, 2.0 * a.sin()), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 10.0, 10.0, 8, 8).unwrap()
            })
            .collect();
        assert!((scene_extent(&cams, Vec3::ZERO) - 2.2).abs() < 1e-12);
        assert!((scene_extent(&cams[..1], Vec3::ZERO) - 2.2).abs() < 1e-12);
    }

    fn gray_target_setup(iterations: usize) -> (View, TrainConfig, Vec<SplatPrimitive>) {
        let camera = frontal_camera(16);
        let view = View {
            name: "gray".into(),
            camera,
            image: Image::filled(16, 16, 3, 0.5),
        };
        let cfg = TrainConfig {
            iterations,
            densify: DensifyConfig { densify_until: Some(0), ..Default::default() },
            init: InitConfig { random_rotation: false, ..Default::default() },
            ..Default::default()
        };
        let mut p = init_scene(&[Vec3::ZERO], &cfg.init, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p[0].log_scale = Vec2::new(2.0, 2.0);
        (view, cfg, p)
    }

    #[test]
    fn zero_iterations_leave_scene_unchanged() {
        let (view, cfg, p) = gray_target_setup(0);
        let r = train(p.clone(), &[&view], &cfg, ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.primitives, p);
        assert!(r.metrics.is_empty());
    }

    #[test]
    fn single_primitive_fits_gray() {
        let (view, cfg, p) = gray_target_setup(200);
        let r = train(p, &[&view], &cfg, ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(r.metrics.last().unwrap().loss < r.metrics[0].loss);
        let final_psnr = mean_psnr(&r.primitives, &[&view], &cfg.render_options()).unwrap();
        assert!(final_psnr > 30.0, "psnr {final_psnr}");
        // monotone over 10-step windows
        let means: Vec<f64> = r.metrics.chunks(10).map(|c| c.iter().map(|m| m.loss).sum::<f64>() / c.len() as f64).collect();
        for w in means.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{means:?}");
        }
    }

    #[test]
    fn forced_clone_starts_with_zero_moments() {
        let (view, mut cfg, mut p) = gray_target_setup(5);
        cfg.densify = DensifyConfig {
            interval: 5,
            densify_until: None,
            strategy: Strategy::ErrorBased,
            threshold: 1e-12,
            split_scale_pct: 100.0,
            prune_opacity: 0.0,
            prune_scale_pct: 1e9,
            ..Default::default()
        };
        cfg.iterations = 100;
        let target = View { image: Image::filled(16, 16, 3, 0.9), ..view };
        p[0].log_scale = Vec2::new(-1.0, -1.0);
        let mut t = Trainer::new(p, vec![&target], cfg, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut ev = None;
        for _ in 0..5 {
            ev = t.step().unwrap().densify.or(ev);
        }
        let ev = ev.expect("densified");
        assert_eq!((ev.clones, ev.count_after), (1, 2));
        assert!(t.adam.m[0].iter().any(|&v| v != 0.0));
        assert!(t.adam.m[1].iter().all(|&v| v == 0.0) && t.adam.v[1].iter().all(|&v| v == 0.0));
        assert_eq!(t.primitives[0].head, t.primitives[1].head);
    }

    #[test]
    fn same_seed_same_result() {
        let (view, cfg, p) = gray_target_setup(30);
        let a = train(p.clone(), &[&view], &cfg, ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = train(p, &[&view], &cfg, ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.primitives, b.primitives);
    }
}
