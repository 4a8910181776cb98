use rand::Rng;
use rayon::prelude::*;

use super::camera::{fill_samples, generate_rays, CameraModel, Ray, RaySample};
use super::grid::{GridField, Stencil};
use super::splat::{SplatCloud, SplatRaster, MAX_ALPHA};
use super::FieldModel;
use crate::math::{self, Vec3};
use crate::{Error, Result};

/// Per-pixel color, mask feature and accumulated opacity, row-major.
/// The same layout carries upstream gradients into [`FieldModel::backprop`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub height: usize,
    pub width: usize,
    pub d_m: usize,
    pub color: Vec<f64>,
    pub feature: Vec<f64>,
    pub accum_opacity: Vec<f64>,
}

impl RenderedView {
    pub fn zeros(height: usize, width: usize, d_m: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            d_m,
            color: vec![0.0; 3 * n],
            feature: vec![0.0; d_m * n],
            accum_opacity: vec![0.0; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn feature_at(&self, p: usize) -> &[f64] {
        &self.feature[p * self.d_m..(p + 1) * self.d_m]
    }

    fn same_shape(&self, other: &RenderedView) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.d_m == other.d_m
            && other.color.len() == 3 * self.pixel_count()
            && other.feature.len() == self.d_m * self.pixel_count()
            && other.accum_opacity.len() == self.pixel_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub n_samples: usize,
    pub jitter: bool,
    pub color: bool,
    pub feature: bool,
    /// Samples whose compositing weight falls below this skip color and
    /// feature lookups. Opacity always uses every sample. Zero renders exactly.
    pub prune_weight: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            n_samples: 64,
            jitter: false,
            color: true,
            feature: true,
            prune_weight: 0.0,
        }
    }
}

/// Sample positions for a set of rays, `n_samples` per ray.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub height: usize,
    pub width: usize,
    pub n_samples: usize,
    pub rays: Vec<Ray>,
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

impl SamplePlan {
    pub fn for_camera<R: Rng + ?Sized>(camera: &CameraModel, n_samples: usize, jitter: bool, rng: &mut R) -> Self {
        let rays = generate_rays(camera);
        let ranges = vec![(camera.near(), camera.far()); rays.len()];
        let mut plan = Self::for_rays(rays, &ranges, n_samples, jitter, rng);
        plan.height = camera.height();
        plan.width = camera.width();
        plan
    }

    /// Arbitrary ray batch laid out as a `1 x n` view.
    pub fn for_rays<R: Rng + ?Sized>(
        rays: Vec<Ray>,
        ranges: &[(f64, f64)],
        n_samples: usize,
        jitter: bool,
        rng: &mut R,
    ) -> Self {
        assert!(n_samples >= 1, "n_samples must be positive");
        assert_eq!(rays.len(), ranges.len());
        let n = rays.len();
        let mut t = vec![0.0; n * n_samples];
        let mut delta = vec![0.0; n * n_samples];
        for (r, &(near, far)) in ranges.iter().enumerate() {
            let span = r * n_samples..(r + 1) * n_samples;
            fill_samples(near, far, jitter, rng, &mut t[span.clone()], &mut delta[span]);
        }
        Self {
            height: 1,
            width: n,
            n_samples,
            rays,
            t,
            delta,
        }
    }
}

#[derive(Debug, Clone)]
pub enum RenderPlan {
    Rays(SamplePlan),
    Raster(SplatRaster),
}

impl RenderPlan {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            RenderPlan::Rays(p) => (p.height, p.width),
            RenderPlan::Raster(r) => (r.height, r.width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayRender {
    pub color: Vec3,
    pub feature: Vec<f64>,
    pub accum_opacity: f64,
}

/// Opacity and transmittance of one composited sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleWeight {
    pub alpha: f64,
    pub transmittance: f64,
}

impl SampleWeight {
    pub fn weight(&self) -> f64 {
        self.alpha * self.transmittance
    }
}

/// Volume-renders one ray through the grid at explicit samples. The
/// background feature is composited behind the volume.
pub fn render_ray(field: &GridField, ray: &Ray, samples: &[RaySample]) -> (RayRender, Vec<SampleWeight>) {
    let t: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let delta: Vec<f64> = samples.iter().map(|s| s.delta).collect();
    let opts = RenderOptions {
        n_samples: samples.len(),
        ..RenderOptions::default()
    };
    let mut color = [0.0; 3];
    let mut feature = vec![0.0; field.d_m()];
    let mut weights = Vec::with_capacity(samples.len());
    let accum = trace_grid(field, ray, &t, &delta, &opts, &mut color, &mut feature, Some(&mut weights));
    (
        RayRender {
            color,
            feature,
            accum_opacity: accum,
        },
        weights,
    )
}

#[allow(clippy::too_many_arguments)]
fn trace_grid(
    field: &GridField,
    ray: &Ray,
    t: &[f64],
    delta: &[f64],
    opts: &RenderOptions,
    color: &mut Vec3,
    feature: &mut [f64],
    mut weights: Option<&mut Vec<SampleWeight>>,
) -> f64 {
    let mut trans = 1.0;
    let mut accum = 0.0;
    for i in 0..t.len() {
        let stencil = field.stencil(ray.at(t[i]));
        let alpha = match &stencil {
            Some(s) => 1.0 - (-delta[i] * math::softplus(field.raw_density_at(s))).exp(),
            None => 0.0,
        };
        if let Some(w) = weights.as_deref_mut() {
            w.push(SampleWeight {
                alpha,
                transmittance: trans,
            });
        }
        let w = trans * alpha;
        accum += w;
        if let Some(s) = &stencil {
            if w > 0.0 && w >= opts.prune_weight {
                if opts.color {
                    let c = field.color_at(s);
                    color[0] += w * c[0];
                    color[1] += w * c[1];
                    color[2] += w * c[2];
                }
                if opts.feature {
                    field.accumulate_feature(s, w, feature);
                }
            }
        }
        trans *= 1.0 - alpha;
    }
    if opts.feature {
        let rest = 1.0 - accum;
        for (f, b) in feature.iter_mut().zip(&field.background_feature) {
            *f += rest * b;
        }
    }
    accum
}

struct SampleRec {
    stencil: Option<Stencil>,
    raw: f64,
    alpha: f64,
    trans: f64,
    used: bool,
}

#[allow(clippy::too_many_arguments)]
fn trace_grid_backward(
    field: &GridField,
    ray: &Ray,
    t: &[f64],
    delta: &[f64],
    opts: &RenderOptions,
    g_color: Vec3,
    g_feature: &[f64],
    g_accum: f64,
    grads: &mut super::FieldGrads,
    recs: &mut Vec<SampleRec>,
) {
    let d_m = field.d_m();
    recs.clear();
    let mut trans = 1.0;
    let mut accum = 0.0;
    for i in 0..t.len() {
        let stencil = field.stencil(ray.at(t[i]));
        let (raw, alpha) = match &stencil {
            Some(s) => {
                let raw = field.raw_density_at(s);
                (raw, 1.0 - (-delta[i] * math::softplus(raw)).exp())
            }
            None => (0.0, 0.0),
        };
        let w = trans * alpha;
        accum += w;
        recs.push(SampleRec {
            used: stencil.is_some() && w > 0.0 && w >= opts.prune_weight,
            stencil,
            raw,
            alpha,
            trans,
        });
        trans *= 1.0 - alpha;
    }
    let g_feature_active = opts.feature && g_feature.iter().any(|&g| g != 0.0);
    let g_color_active = opts.color && g_color.iter().any(|&g| g != 0.0);
    // Background feature enters as (1 - A) * f_bg.
    let bg_dot = if g_feature_active {
        math::dot(g_feature, &field.background_feature)
    } else {
        0.0
    };
    if g_feature_active {
        let rest = 1.0 - accum;
        for (g, gf) in grads.background.iter_mut().zip(g_feature) {
            *g += rest * gf;
        }
    }
    let mut tail = 0.0;
    for (idx, rec) in recs.iter().enumerate().rev() {
        let Some(s) = &rec.stencil else {
            // alpha = 0: the tail recurrence passes through unchanged.
            continue;
        };
        let w = rec.trans * rec.alpha;
        // d(output)/d(w_i) contracted with the upstream gradient.
        let mut g_w = g_accum - bg_dot;
        if rec.used {
            if g_color_active {
                let c = field.color_at(s);
                g_w += g_color[0] * c[0] + g_color[1] * c[1] + g_color[2] * c[2];
                let g_raw: Vec3 = std::array::from_fn(|a| g_color[a] * c[a] * (1.0 - c[a]));
                for k in 0..8 {
                    let base = 3 * s.index[k];
                    let ww = w * s.weight[k];
                    grads.color[base] += ww * g_raw[0];
                    grads.color[base + 1] += ww * g_raw[1];
                    grads.color[base + 2] += ww * g_raw[2];
                }
            }
            if g_feature_active {
                for k in 0..8 {
                    let base = d_m * s.index[k];
                    let ww = w * s.weight[k];
                    let f = &field.mask_feature[base..base + d_m];
                    g_w += s.weight[k] * math::dot(g_feature, f);
                    for (g, gf) in grads.feature[base..base + d_m].iter_mut().zip(g_feature) {
                        *g += ww * gf;
                    }
                }
            }
        }
        let g_alpha = rec.trans * (g_w - tail);
        tail = rec.alpha * g_w + (1.0 - rec.alpha) * tail;
        // alpha = 1 - exp(-delta * softplus(raw))
        let g_raw = g_alpha * delta[idx] * (1.0 - rec.alpha) * math::sigmoid(rec.raw);
        if g_raw != 0.0 {
            for k in 0..8 {
                grads.geometry[s.index[k]] += g_raw * s.weight[k];
            }
        }
    }
}

fn render_grid(field: &GridField, plan: &SamplePlan, opts: &RenderOptions) -> RenderedView {
    let d_m = field.d_m();
    let n = plan.rays.len();
    let ns = plan.n_samples;
    let mut view = RenderedView::zeros(plan.height, plan.width, d_m);
    let per_ray: Vec<(Vec3, Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut color = [0.0; 3];
            let mut feature = vec![0.0; if opts.feature { d_m } else { 0 }];
            let span = r * ns..(r + 1) * ns;
            let accum = trace_grid(
                field,
                &plan.rays[r],
                &plan.t[span.clone()],
                &plan.delta[span],
                opts,
                &mut color,
                &mut feature,
                None,
            );
            (color, feature, accum)
        })
        .collect();
    for (r, (color, feature, accum)) in per_ray.into_iter().enumerate() {
        view.color[3 * r..3 * r + 3].copy_from_slice(&color);
        if opts.feature {
            view.feature[d_m * r..d_m * (r + 1)].copy_from_slice(&feature);
        }
        view.accum_opacity[r] = accum;
    }
    view
}

fn backprop_grid(
    field: &GridField,
    plan: &SamplePlan,
    opts: &RenderOptions,
    upstream: &RenderedView,
    grads: &mut super::FieldGrads,
) {
    let d_m = field.d_m();
    let ns = plan.n_samples;
    let mut recs = Vec::with_capacity(ns);
    for r in 0..plan.rays.len() {
        let span = r * ns..(r + 1) * ns;
        let g_color = [upstream.color[3 * r], upstream.color[3 * r + 1], upstream.color[3 * r + 2]];
        trace_grid_backward(
            field,
            &plan.rays[r],
            &plan.t[span.clone()],
            &plan.delta[span],
            opts,
            g_color,
            &upstream.feature[d_m * r..d_m * (r + 1)],
            upstream.accum_opacity[r],
            grads,
            &mut recs,
        );
    }
}

#[inline]
fn splat_alpha(cloud: &SplatCloud, s: usize, falloff: f64) -> (f64, bool) {
    let a = math::sigmoid(cloud.opacity_raw[s]) * falloff;
    if a > MAX_ALPHA {
        (MAX_ALPHA, true)
    } else {
        (a.max(0.0), false)
    }
}

/// Opacity and transmittance of each contributor to one pixel, front to back.
pub fn splat_pixel_weights(cloud: &SplatCloud, raster: &SplatRaster, pixel: usize) -> Vec<SampleWeight> {
    let mut trans = 1.0;
    raster
        .pixel(pixel)
        .iter()
        .map(|&(s, g)| {
            let (alpha, _) = splat_alpha(cloud, s as usize, g);
            let w = SampleWeight {
                alpha,
                transmittance: trans,
            };
            trans *= 1.0 - alpha;
            w
        })
        .collect()
}

fn render_raster(cloud: &SplatCloud, raster: &SplatRaster, opts: &RenderOptions) -> RenderedView {
    let d_m = cloud.d_m();
    let mut view = RenderedView::zeros(raster.height, raster.width, d_m);
    for p in 0..raster.height * raster.width {
        let mut trans = 1.0;
        let mut accum = 0.0;
        let feature = &mut view.feature[d_m * p..d_m * (p + 1)];
        for &(s, g) in raster.pixel(p) {
            let s = s as usize;
            let (alpha, _) = splat_alpha(cloud, s, g);
            let w = trans * alpha;
            accum += w;
            if w > 0.0 && w >= opts.prune_weight {
                if opts.color {
                    for a in 0..3 {
                        view.color[3 * p + a] += w * math::sigmoid(cloud.colors[3 * s + a]);
                    }
                }
                if opts.feature {
                    for (f, v) in feature.iter_mut().zip(&cloud.mask_features[d_m * s..d_m * (s + 1)]) {
                        *f += w * v;
                    }
                }
            }
            trans *= 1.0 - alpha;
        }
        if opts.feature {
            for (f, b) in feature.iter_mut().zip(&cloud.background_feature) {
                *f += (1.0 - accum) * b;
            }
        }
        view.accum_opacity[p] = accum;
    }
    view
}

fn backprop_raster(
    cloud: &SplatCloud,
    raster: &SplatRaster,
    opts: &RenderOptions,
    upstream: &RenderedView,
    grads: &mut super::FieldGrads,
) {
    let d_m = cloud.d_m();
    let mut recs: Vec<(usize, f64, f64, f64, bool, bool)> = Vec::new();
    for p in 0..raster.height * raster.width {
        let g_color = &upstream.color[3 * p..3 * p + 3];
        let g_feature = &upstream.feature[d_m * p..d_m * (p + 1)];
        let g_accum = upstream.accum_opacity[p];
        recs.clear();
        let mut trans = 1.0;
        let mut accum = 0.0;
        for &(s, g) in raster.pixel(p) {
            let s = s as usize;
            let (alpha, clamped) = splat_alpha(cloud, s, g);
            let w = trans * alpha;
            accum += w;
            recs.push((s, g, alpha, trans, clamped, w > 0.0 && w >= opts.prune_weight));
            trans *= 1.0 - alpha;
        }
        let bg_dot = if opts.feature {
            math::dot(g_feature, &cloud.background_feature)
        } else {
            0.0
        };
        if opts.feature {
            for (gb, gf) in grads.background.iter_mut().zip(g_feature) {
                *gb += (1.0 - accum) * gf;
            }
        }
        let mut tail = 0.0;
        for &(s, g, alpha, trans, clamped, used) in recs.iter().rev() {
            let w = trans * alpha;
            let mut g_w = g_accum - bg_dot;
            if used {
                if opts.color {
                    for a in 0..3 {
                        let c = math::sigmoid(cloud.colors[3 * s + a]);
                        g_w += g_color[a] * c;
                        grads.color[3 * s + a] += w * g_color[a] * c * (1.0 - c);
                    }
                }
                if opts.feature {
                    g_w += math::dot(g_feature, &cloud.mask_features[d_m * s..d_m * (s + 1)]);
                    for (gf, u) in grads.feature[d_m * s..d_m * (s + 1)].iter_mut().zip(g_feature) {
                        *gf += w * u;
                    }
                }
            }
            let g_alpha = trans * (g_w - tail);
            tail = alpha * g_w + (1.0 - alpha) * tail;
            if !clamped {
                let sig = math::sigmoid(cloud.opacity_raw[s]);
                grads.geometry[s] += g_alpha * g * sig * (1.0 - sig);
            }
        }
    }
}

pub(crate) fn render_plan(field: &FieldModel, plan: &RenderPlan, opts: &RenderOptions) -> Result<RenderedView> {
    match (field, plan) {
        (FieldModel::Grid(g), RenderPlan::Rays(p)) => Ok(render_grid(g, p, opts)),
        (FieldModel::Splat(s), RenderPlan::Raster(r)) => Ok(render_raster(s, r, opts)),
        _ => Err(Error::Invalid("render plan does not match the field backend".into())),
    }
}

pub(crate) fn backprop_plan(
    field: &FieldModel,
    plan: &RenderPlan,
    opts: &RenderOptions,
    upstream: &RenderedView,
) -> Result<FieldGrads> {
    let (h, w) = plan.shape();
    let expected = RenderedView::zeros(h, w, field.d_m());
    if !expected.same_shape(upstream) {
        return Err(Error::Shape(format!(
            "upstream gradient is {}x{}x{} but the view is {}x{}x{}",
            upstream.height,
            upstream.width,
            upstream.d_m,
            h,
            w,
            field.d_m()
        )));
    }
    let mut grads = field.zero_grads();
    match (field, plan) {
        (FieldModel::Grid(g), RenderPlan::Rays(p)) => backprop_grid(g, p, opts, upstream, &mut grads),
        (FieldModel::Splat(s), RenderPlan::Raster(r)) => backprop_raster(s, r, opts, upstream, &mut grads),
        _ => return Err(Error::Invalid("render plan does not match the field backend".into())),
    }
    Ok(grads)
}

/// Gradients of a scalar loss with respect to every field parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrads {
    pub geometry: Vec<f64>,
    pub color: Vec<f64>,
    pub feature: Vec<f64>,
    pub background: Vec<f64>,
}

/// Renders a full camera view. Jittered sampling draws from `rng`.
pub fn render_view<R: Rng + ?Sized>(
    field: &FieldModel,
    camera: &CameraModel,
    opts: &RenderOptions,
    rng: &mut R,
) -> Result<RenderedView> {
    let plan = field.plan(camera, opts, rng);
    field.render(&plan, opts)
}

/// Rasterizes a splat cloud for one camera.
pub fn render_splats(cloud: &SplatCloud, camera: &CameraModel) -> RenderedView {
    render_raster(cloud, &SplatRaster::build(cloud, camera), &RenderOptions::default())
}

/// Backpropagates `upstream` through the render of `camera`. `rng` must be
/// in the state it had for the matching forward [`render_view`] call.
pub fn backprop_view<R: Rng + ?Sized>(
    field: &FieldModel,
    camera: &CameraModel,
    opts: &RenderOptions,
    rng: &mut R,
    upstream: &RenderedView,
) -> Result<FieldGrads> {
    let plan = field.plan(camera, opts, rng);
    field.backprop(&plan, opts, upstream)
}
