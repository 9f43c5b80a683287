//! Adaptive density control: scoring, clone/split, pruning and the gradual
//! opacity reset.
//!
//! Scores come from one of three strategies. The frequency-aware and
//! error-based strategies project a per-pixel error map onto primitives
//! through their recorded blend weights and keep the maximum over a sample
//! of views; the gradient-based baseline uses the mean screen-space
//! position gradient accumulated by the trainer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::l1_map;
use crate::primitive::SplatPrimitive;
use crate::render::{render, Contributions, RenderOptions};
use crate::scene_io::View;
use crate::spectral::{freq_error_map, sum_maps, FreqErrorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    FrequencyAware,
    ErrorBased,
    GradientBased,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::FrequencyAware => "frequency-aware",
            Strategy::ErrorBased => "error-based",
            Strategy::GradientBased => "gradient-based",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frequency-aware" => Ok(Strategy::FrequencyAware),
            "error-based" => Ok(Strategy::ErrorBased),
            "gradient-based" => Ok(Strategy::GradientBased),
            _ => Err(Error::Config(format!("unknown strategy '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensifyConfig {
    pub interval: usize,
    pub views_per_round: usize,
    /// Score threshold for the error-projection strategies.
    pub threshold: f64,
    /// Score threshold for the gradient-based strategy.
    pub gradient_threshold: f64,
    pub max_primitives: usize,
    pub bands: FreqErrorConfig,
    pub strategy: Strategy,
    /// Select band by band, highest frequency first, instead of summing bands.
    pub per_band: bool,
    /// Clone when the largest scale is below this fraction of the scene extent, else split.
    pub split_scale_pct: f64,
    pub split_factor: f64,
    pub prune_opacity: f64,
    pub prune_scale_pct: f64,
    /// Last iteration that may densify; `None` means 95% of training.
    pub densify_until: Option<usize>,
    pub reset_every: usize,
    pub reset_rounds: usize,
    pub reset_target: f64,
    pub reset_keep: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            interval: 100,
            views_per_round: 20,
            threshold: 0.01,
            gradient_threshold: 2e-4,
            max_primitives: 100_000,
            bands: FreqErrorConfig::default(),
            strategy: Strategy::FrequencyAware,
            per_band: false,
            split_scale_pct: 0.01,
            split_factor: 1.6,
            prune_opacity: 0.05,
            prune_scale_pct: 0.5,
            densify_until: None,
            reset_every: 30,
            reset_rounds: 3,
            reset_target: 0.05,
            reset_keep: 0.9,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::Config("densify.interval must be >= 1".into()));
        }
        if !(self.threshold > 0.0) || !(self.gradient_threshold > 0.0) {
            return Err(Error::Config("densify thresholds must be > 0".into()));
        }
        if !(self.split_factor > 1.0) {
            return Err(Error::Config("densify.split_factor must be > 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reset_keep) {
            return Err(Error::Config("densify.reset_keep must be in [0, 1]".into()));
        }
        self.bands.validate()
    }

    pub fn until(&self, total_iterations: usize) -> usize {
        self.densify_until.unwrap_or(total_iterations * 95 / 100)
    }

    pub fn active_threshold(&self) -> f64 {
        match self.strategy {
            Strategy::GradientBased => self.gradient_threshold,
            _ => self.threshold,
        }
    }

    /// Whether the opacity reset applies after densification round `round` (1-based).
    pub fn reset_active(&self, round: usize) -> bool {
        self.reset_every > 0 && round >= self.reset_every && round % self.reset_every < self.reset_rounds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrimitiveScore {
    pub id: usize,
    pub score: f64,
    pub band_index: Option<usize>,
}

/// `E_k = Σ_pixels ε(pixel) · w_k(pixel)` for every primitive.
pub fn project_error(error_map: &Image, contribs: &Contributions, n_primitives: usize) -> Vec<f64> {
    assert_eq!(error_map.channels, 1);
    assert_eq!(error_map.height * error_map.width, contribs.pixel_count());
    let mut out = vec![0.0; n_primitives];
    for (p, &e) in error_map.data.iter().enumerate() {
        if e == 0.0 {
            continue;
        }
        for c in contribs.pixel(p) {
            out[c.id as usize] += e * c.weight;
        }
    }
    out
}

/// Per-view error maps: one per band for the frequency-aware strategy
/// (summed unless `per_band`), a single channel-mean L1 map for error-based.
fn view_error_maps(rendered: &Image, gt: &Image, cfg: &DensifyConfig) -> Result<Vec<Image>> {
    match cfg.strategy {
        Strategy::FrequencyAware => {
            let maps = freq_error_map(rendered, gt, &cfg.bands)?;
            if cfg.per_band {
                Ok(maps)
            } else {
                Ok(sum_maps(&maps).into_iter().collect())
            }
        }
        Strategy::ErrorBased => Ok(vec![l1_map(rendered, gt)?]),
        Strategy::GradientBased => Err(Error::Config("gradient-based scores come from gradient statistics".into())),
    }
}

/// Per-view projected errors, indexed `[view][map][primitive]`.
pub fn project_views(primitives: &[SplatPrimitive], views: &[&View], opts: &RenderOptions, cfg: &DensifyConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    let opts = RenderOptions {
        record_contribs: true,
        ..*opts
    };
    views
        .par_iter()
        .map(|v| {
            let out = render(primitives, &v.camera, &opts);
            let contribs = out.contribs.as_ref().expect("contributions recorded");
            let maps = view_error_maps(&out.rgb, &v.image, cfg)?;
            Ok(maps.iter().map(|m| project_error(m, contribs, primitives.len())).collect())
        })
        .collect()
}

/// Elementwise maximum over views.
pub fn max_over_views(per_view: &[Vec<f64>]) -> Vec<f64> {
    let n = per_view.first().map_or(0, |v| v.len());
    (0..n).map(|k| per_view.iter().map(|v| v[k]).fold(0.0, f64::max)).collect()
}

/// Scores every primitive by its worst projected error over the sampled views.
pub fn score_round(primitives: &[SplatPrimitive], views: &[&View], opts: &RenderOptions, cfg: &DensifyConfig) -> Result<Vec<PrimitiveScore>> {
    let projected = project_views(primitives, views, opts, cfg)?;
    let n_maps = projected.first().map_or(0, |v| v.len());
    let mut scores = Vec::new();
    for m in 0..n_maps {
        let per_view: Vec<Vec<f64>> = projected.iter().map(|v| v[m].clone()).collect();
        let band_index = (cfg.per_band && cfg.strategy == Strategy::FrequencyAware).then_some(m);
        for (id, score) in max_over_views(&per_view).into_iter().enumerate() {
            scores.push(PrimitiveScore { id, score, band_index });
        }
    }
    Ok(scores)
}

/// Mean accumulated screen-space gradient norm per primitive.
pub fn gradient_based_scores(grad_sum: &[f64], visible: &[u32]) -> Vec<PrimitiveScore> {
    grad_sum
        .iter()
        .zip(visible)
        .enumerate()
        .map(|(id, (&s, &n))| PrimitiveScore {
            id,
            score: if n == 0 { 0.0 } else { s / n as f64 },
            band_index: None,
        })
        .collect()
}

fn ranked(scores: &[&PrimitiveScore]) -> Vec<usize> {
    let mut v: Vec<&PrimitiveScore> = scores.to_vec();
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    v.iter().map(|s| s.id).collect()
}

/// Ids above `threshold`, best first, truncated so that adding one primitive
/// per candidate keeps the count within `max_primitives`. With per-band
/// scores the highest band is drained first.
pub fn select_candidates(scores: &[PrimitiveScore], threshold: f64, max_primitives: usize, current_count: usize) -> Vec<usize> {
    let room = max_primitives.saturating_sub(current_count);
    let above: Vec<&PrimitiveScore> = scores.iter().filter(|s| s.score > threshold).collect();
    let mut bands: Vec<Option<usize>> = above.iter().map(|s| s.band_index).collect();
    bands.sort();
    bands.dedup();
    let mut out: Vec<usize> = Vec::new();
    for band in bands.into_iter().rev() {
        let group: Vec<&PrimitiveScore> = above.iter().copied().filter(|s| s.band_index == band).collect();
        for id in ranked(&group) {
            if out.len() >= room {
                return out;
            }
            if !out.contains(&id) {
                out.push(id);
            }
        }
    }
    out
}

/// α′ with `1 − (1 − α′)² = α`.
pub fn corrected_opacity(alpha: f64) -> f64 {
    1.0 - (1.0 - alpha).sqrt()
}

fn footprint_sample<R: Rng + ?Sized>(p: &SplatPrimitive, rng: &mut R) -> crate::geometry::Vec3 {
    let s = p.scale();
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    let r = p.rot.to_matrix();
    p.mu + r.col(0) * (a * s.x) + r.col(1) * (b * s.y)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Densified {
    /// Parent with corrected opacity, plus a jittered copy.
    Clone { parent: SplatPrimitive, copy: SplatPrimitive },
    /// Two children replacing the parent.
    Split { children: [SplatPrimitive; 2] },
}

pub fn clone_or_split<R: Rng + ?Sized>(p: &SplatPrimitive, scene_extent: f64, cfg: &DensifyConfig, rng: &mut R) -> Densified {
    let alpha = corrected_opacity(p.opacity());
    if p.max_scale() < cfg.split_scale_pct * scene_extent {
        let mut parent = p.clone();
        parent.set_opacity(alpha);
        let mut copy = parent.clone();
        copy.mu = footprint_sample(p, rng);
        Densified::Clone { parent, copy }
    } else {
        let shrink = cfg.split_factor.ln();
        let child = |rng: &mut R| {
            let mut c = p.clone();
            c.mu = footprint_sample(p, rng);
            c.log_scale.x -= shrink;
            c.log_scale.y -= shrink;
            c.set_opacity(alpha);
            c
        };
        let a = child(rng);
        let b = child(rng);
        Densified::Split { children: [a, b] }
    }
}

/// Result of mutating the primitive array. `origin[i]` names the old index
/// whose optimizer state primitive `i` inherits, or `None` for fresh state.
#[derive(Clone, Debug)]
pub struct Mutation {
    pub primitives: Vec<SplatPrimitive>,
    pub origin: Vec<Option<usize>>,
    pub clones: usize,
    pub splits: usize,
    pub pruned: usize,
}

/// Applies clone/split to `candidates`. Survivors keep their relative order
/// and state; new primitives are appended in candidate order.
pub fn densify<R: Rng + ?Sized>(
    primitives: &[SplatPrimitive],
    candidates: &[usize],
    scene_extent: f64,
    cfg: &DensifyConfig,
    rng: &mut R,
) -> Mutation {
    let mut kept: Vec<Option<SplatPrimitive>> = primitives.iter().cloned().map(Some).collect();
    let mut fresh = Vec::new();
    let (mut clones, mut splits) = (0, 0);
    for &id in candidates {
        match clone_or_split(&primitives[id], scene_extent, cfg, rng) {
            Densified::Clone { parent, copy } => {
                kept[id] = Some(parent);
                fresh.push(copy);
                clones += 1;
            }
            Densified::Split { children } => {
                kept[id] = None;
                fresh.extend(children);
                splits += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(kept.len() + fresh.len());
    let mut origin = Vec::with_capacity(out.capacity());
    for (i, p) in kept.into_iter().enumerate() {
        if let Some(p) = p {
            out.push(p);
            origin.push(Some(i));
        }
    }
    origin.extend(std::iter::repeat_n(None, fresh.len()));
    out.extend(fresh);
    Mutation {
        primitives: out,
        origin,
        clones,
        splits,
        pruned: 0,
    }
}

pub fn should_prune(p: &SplatPrimitive, scene_extent: f64, cfg: &DensifyConfig) -> bool {
    p.opacity() < cfg.prune_opacity || p.max_scale() > cfg.prune_scale_pct * scene_extent
}

/// Drops low-opacity and oversized primitives, composing `origin` through.
pub fn prune(m: Mutation, scene_extent: f64, cfg: &DensifyConfig) -> Mutation {
    let before = m.primitives.len();
    let (primitives, origin): (Vec<_>, Vec<_>) = m
        .primitives
        .into_iter()
        .zip(m.origin)
        .filter(|(p, _)| !should_prune(p, scene_extent, cfg))
        .unzip();
    Mutation {
        pruned: before - primitives.len(),
        primitives,
        origin,
        ..m
    }
}

/// One step of `α ← min(α, keep·α + (1 − keep)·target)`.
pub fn gradual_opacity_reset(primitives: &mut [SplatPrimitive], target: f64, keep: f64) {
    for p in primitives.iter_mut() {
        let a = p.opacity();
        let capped = a.min(keep * a + (1.0 - keep) * target);
        if capped < a {
            p.set_opacity(capped);
        }
    }
}

/// One line of the densification log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensifyEvent {
    pub iteration: usize,
    pub strategy: Strategy,
    pub candidates: usize,
    pub clones: usize,
    pub splits: usize,
    pub pruned: usize,
    pub count_after: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_ray, Vec3};
    use crate::render::tests::{flat_primitive, frontal_camera, random_scene};
    use crate::render::Contribution;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn contribs(pixels: &[Vec<(u32, f64)>]) -> Contributions {
        let mut offsets = vec![0];
        let mut entries = vec![];
        for px in pixels {
            entries.extend(px.iter().map(|&(id, weight)| Contribution { id, weight }));
            offsets.push(entries.len());
        }
        Contributions { offsets, entries }
    }

    #[test]
    fn project_error_examples() {
        let c = contribs(&vec![vec![(0, 1.0)]; 4]);
        assert_eq!(project_error(&Image::new(2, 2, 1), &c, 1), vec![0.0]);
        let e = Image::from_data(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((project_error(&e, &c, 1)[0] - 1.0).abs() < 1e-15);

        let pixels = vec![vec![(0, 0.5), (1, 0.25)], vec![(1, 0.7)], vec![], vec![(0, 0.1), (1, 0.2)]];
        let got = project_error(&e, &contribs(&pixels), 2);
        let mut want = [0.0; 2];
        for (p, px) in pixels.iter().enumerate() {
            for &(id, w) in px {
                want[id as usize] += e.data[p] * w;
            }
        }
        assert!((got[0] - want[0]).abs() < 1e-15 && (got[1] - want[1]).abs() < 1e-15);
    }

    fn views_of(prims: &[SplatPrimitive], n: usize) -> Vec<View> {
        (0..n)
            .map(|i| {
                let camera = frontal_camera(24);
                View {
                    name: format!("{i}"),
                    image: render(prims, &camera, &RenderOptions::default()).rgb,
                    camera,
                }
            })
            .collect()
    }

    #[test]
    fn perfect_render_scores_zero() {
        let prims = random_scene(&mut ChaCha8Rng::seed_from_u64(2), 10);
        let views = views_of(&prims, 3);
        let refs: Vec<&View> = views.iter().collect();
        for strategy in [Strategy::FrequencyAware, Strategy::ErrorBased] {
            let cfg = DensifyConfig { strategy, bands: FreqErrorConfig { avg_kernel: 5, ..Default::default() }, ..Default::default() };
            let scores = score_round(&prims, &refs, &RenderOptions::default(), &cfg).unwrap();
            assert!(scores.iter().all(|s| s.score == 0.0));
            assert!(select_candidates(&scores, cfg.threshold, 1000, prims.len()).is_empty());
        }
        let g = gradient_based_scores(&[0.0; 10], &[3; 10]);
        assert!(select_candidates(&g, 2e-4, 1000, 10).is_empty());
    }

    #[test]
    fn single_view_score_is_projection() {
        let prims = random_scene(&mut ChaCha8Rng::seed_from_u64(3), 8);
        let mut views = views_of(&prims, 1);
        views[0].image = views[0].image.map(|v| 1.0 - v);
        let cfg = DensifyConfig { strategy: Strategy::ErrorBased, ..Default::default() };
        let scores = score_round(&prims, &[&views[0]], &RenderOptions::default(), &cfg).unwrap();
        let out = render(&prims, &views[0].camera, &RenderOptions::default().with_contribs());
        let direct = project_error(&l1_map(&out.rgb, &views[0].image).unwrap(), out.contribs.as_ref().unwrap(), 8);
        for (s, d) in scores.iter().zip(&direct) {
            assert_eq!(s.score, *d);
        }
    }

    #[test]
    fn score_is_max_over_views() {
        assert_eq!(max_over_views(&[vec![0.1], vec![0.4], vec![0.2]]), vec![0.4]);
    }

    #[test]
    fn candidate_selection_examples() {
        let mk = |v: &[f64]| v.iter().enumerate().map(|(id, &score)| PrimitiveScore { id, score, band_index: None }).collect::<Vec<_>>();
        let s = mk(&[0.02, 0.005, 0.3]);
        assert_eq!(select_candidates(&s, 0.01, 100, 3), vec![2, 0]);
        assert_eq!(select_candidates(&s, 0.01, 4, 3), vec![2]);
        assert!(select_candidates(&mk(&[0.001, 0.002]), 0.01, 100, 2).is_empty());
        assert!(select_candidates(&s, 0.01, 3, 3).is_empty());
    }

    #[test]
    fn per_band_selection_drains_high_band_first() {
        let s = vec![
            PrimitiveScore { id: 0, score: 0.9, band_index: Some(0) },
            PrimitiveScore { id: 1, score: 0.05, band_index: Some(2) },
            PrimitiveScore { id: 2, score: 0.2, band_index: Some(1) },
            PrimitiveScore { id: 1, score: 0.5, band_index: Some(0) },
        ];
        assert_eq!(select_candidates(&s, 0.01, 100, 0), vec![1, 2, 0]);
        assert_eq!(select_candidates(&s, 0.01, 2, 0), vec![1, 2]);
    }

    #[test]
    fn gradient_scores_rank_like_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sums: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1e-2)).collect();
        let vis: Vec<u32> = (0..50).map(|_| rng.random_range(1..20)).collect();
        let scores = gradient_based_scores(&sums, &vis);
        let got = select_candidates(&scores, 0.0, 1000, 0);
        let mut want: Vec<(f64, usize)> = sums.iter().zip(&vis).enumerate().map(|(i, (s, n))| (s / *n as f64, i)).collect();
        want.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        assert_eq!(got, want.iter().map(|w| w.1).collect::<Vec<_>>());

        let mut one = vec![0.0; 5];
        one[3] = 1e-3;
        assert_eq!(select_candidates(&gradient_based_scores(&one, &[1; 5]), 2e-4, 100, 5), vec![3]);
    }

    #[test]
    fn opacity_correction_examples() {
        assert!((corrected_opacity(0.75) - 0.5).abs() < 1e-15);
        assert!((corrected_opacity(0.19) - 0.1).abs() < 1e-15);
        let a = corrected_opacity(0.75);
        assert!((1.0 - (1.0 - a) * (1.0 - a) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn clone_and_split_copy_heads_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prims = random_scene(&mut rng, 2);
        let cfg = DensifyConfig::default();
        let small = {
            let mut p = prims[0].clone();
            p.log_scale = crate::geometry::Vec2::new(-6.0, -6.5);
            p.set_opacity(0.75);
            p
        };
        match clone_or_split(&small, 1.0, &cfg, &mut rng) {
            Densified::Clone { parent, copy } => {
                assert_eq!(parent.head, small.head);
                assert_eq!(copy.head, small.head);
                assert!((parent.opacity() - 0.5).abs() < 1e-12 && (copy.opacity() - 0.5).abs() < 1e-12);
                assert_eq!(parent.mu, small.mu);
                assert_ne!(copy.mu, small.mu);
            }
            other => panic!("expected clone, got {other:?}"),
        }
        let big = prims[1].clone();
        match clone_or_split(&big, 1.0, &cfg, &mut rng) {
            Densified::Split { children } => {
                for c in &children {
                    assert_eq!(c.head, big.head);
                    assert!((c.max_scale() * 1.6 - big.max_scale()).abs() < 1e-12);
                    assert!((c.opacity() - corrected_opacity(big.opacity())).abs() < 1e-12);
                }
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_clone_pair_composites_to_parent_alpha() {
        let cam = frontal_camera(16);
        let ray = make_ray(&cam, 8.5, 8.5);
        let hit = ray.origin + ray.direction * (-ray.origin.z / ray.direction.z);
        for alpha in [0.05, 0.3, 0.75, 0.99] {
            let parent = flat_primitive(hit, 0.4, alpha, [0.0; 3]);
            let mut child = parent.clone();
            child.set_opacity(corrected_opacity(alpha));
            let single = render(std::slice::from_ref(&parent), &cam, &RenderOptions::default()).alpha;
            let pair = render(&[child.clone(), child], &cam, &RenderOptions::default()).alpha;
            assert!((single.get(8, 8, 0) - alpha).abs() < 1e-6);
            assert!((pair.get(8, 8, 0) - alpha).abs() < 1e-6);
        }
    }

    #[test]
    fn densify_keeps_order_and_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut prims = random_scene(&mut rng, 4);
        prims[1].log_scale = crate::geometry::Vec2::new(-8.0, -8.0);
        let m = densify(&prims, &[1, 2], 1.0, &DensifyConfig::default(), &mut rng);
        assert_eq!((m.clones, m.splits), (1, 1));
        assert_eq!(m.primitives.len(), 6);
        assert_eq!(m.origin, vec![Some(0), Some(1), Some(3), None, None, None]);
        assert_eq!(m.primitives[0], prims[0]);
        assert_eq!(m.primitives[2], prims[3]);
    }

    #[test]
    fn prune_examples() {
        let cfg = DensifyConfig::default();
        let mut p = flat_primitive(Vec3::ZERO, 0.1, 0.01, [0.0; 3]);
        assert!(should_prune(&p, 1.0, &cfg));
        p.set_opacity(0.9);
        assert!(!should_prune(&p, 1.0, &cfg));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let prims: Vec<SplatPrimitive> = (0..200)
            .map(|_| flat_primitive(Vec3::ZERO, rng.random_range(0.01..1.0), rng.random_range(0.001..0.999), [0.0; 3]))
            .collect();
        let n = prims.len();
        let m = Mutation { primitives: prims.clone(), origin: (0..n).map(Some).collect(), clones: 0, splits: 0, pruned: 0 };
        let out = prune(m, 1.2, &cfg);
        let want: Vec<usize> = (0..n).filter(|&i| prims[i].opacity() >= 0.05 && prims[i].max_scale() <= 0.6).collect();
        assert_eq!(out.origin, want.iter().map(|&i| Some(i)).collect::<Vec<_>>());
        assert_eq!(out.pruned, n - want.len());
    }

    #[test]
    fn gradual_reset_examples() {
        let mut p = [flat_primitive(Vec3::ZERO, 0.1, 0.05, [0.0; 3]), flat_primitive(Vec3::ZERO, 0.1, 1.0 - 1e-12, [0.0; 3])];
        p[1].raw_opacity = 40.0; // α = 1 in double precision
        gradual_opacity_reset(&mut p, 0.05, 0.9);
        assert!((p[0].opacity() - 0.05).abs() < 1e-12);
        assert!((p[1].opacity() - 0.905).abs() < 1e-12);
        gradual_opacity_reset(&mut p, 0.05, 0.9);
        assert!((p[1].opacity() - 0.8195).abs() < 1e-12);
        gradual_opacity_reset(&mut p, 0.05, 0.9);
        assert!((p[1].opacity() - 0.74255).abs() < 1e-12);
    }

    #[test]
    fn reset_schedule() {
        let cfg = DensifyConfig::default();
        let active: Vec<usize> = (1..=95).filter(|&r| cfg.reset_active(r)).collect();
        assert_eq!(active, vec![30, 31, 32, 60, 61, 62, 90, 91, 92]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cap_is_respected(seed in 0u64..10_000, n in 1usize..40, cap_slack in 0usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prims = random_scene(&mut rng, n);
            let scores: Vec<PrimitiveScore> = (0..n).map(|id| PrimitiveScore { id, score: rng.random_range(0.0..0.1), band_index: None }).collect();
            let cap = n + cap_slack;
            let cands = select_candidates(&scores, 0.01, cap, n);
            let m = densify(&prims, &cands, 1.0, &DensifyConfig::default(), &mut rng);
            prop_assert!(m.primitives.len() <= cap);
            prop_assert_eq!(m.primitives.len(), n + cands.len());
        }

        #[test]
        fn clone_pair_identity(alpha in 0.001f64..0.999) {
            let a = corrected_opacity(alpha);
            prop_assert!((1.0 - (1.0 - a) * (1.0 - a) - alpha).abs() < 1e-12);
        }
    }
}
