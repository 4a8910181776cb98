//! Two-stage optimization.
//!
//! Stage one fits density and color to the posed images with jittered ray
//! batches (grid) or full rasterized views (splats). Stage two freezes that
//! geometry and trains the mask features, the background feature and both
//! token MLPs against per-view mask supervision, one full view per step.

mod adam;
mod gradcheck;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use gradcheck::{gradcheck, pipeline_gradcheck, GradCheckReport};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{SceneDataset, Split, ViewRecord};
use crate::distill::{
    loss_for_matching, loss_gradients, total_loss, LossBreakdown, LossHyper, MaskSet, MatchResult, Predictions,
};
use crate::fields::{
    Aabb, Backend, FieldGrads, FieldModel, GridField, RenderOptions, RenderPlan, RenderedView, SamplePlan, SplatCloud,
};
use crate::math;
use crate::tokens::{backprop_tokens, mask_logits, TokenBank, TokenGrads, Tokens};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub backend: Backend,
    pub d_m: usize,
    pub d_s: usize,
    pub n_k: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Stage-two step size (mask features, background feature, token MLPs).
    pub learning_rate: f64,
    /// Stage-one step size (density or opacity, color).
    pub geometry_learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub n_samples: usize,
    /// Fraction of training views that provide mask supervision.
    pub view_fraction: f64,
    /// Rays per stage-one step on the grid backend.
    pub ray_batch: usize,
    pub grid_resolution: usize,
    /// Half extent of the cube holding the scene.
    pub scene_bound: f64,
    pub splat_count: usize,
    pub splat_radius: f64,
    pub num_freqs: usize,
    pub token_hidden: usize,
    /// Standard deviation of the initial color and feature values.
    pub init_std: f64,
    pub loss: LossHyper,
    /// Stage-two renders skip color/feature work for samples lighter than this.
    pub prune_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Grid,
            d_m: 16,
            d_s: 32,
            n_k: 64,
            stage1_steps: 2000,
            stage2_steps: 2000,
            learning_rate: 5e-3,
            geometry_learning_rate: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
            n_samples: 64,
            view_fraction: 1.0,
            ray_batch: 4096,
            grid_resolution: 64,
            scene_bound: 0.5,
            splat_count: 20_000,
            splat_radius: 0.02,
            num_freqs: 6,
            token_hidden: 64,
            init_std: 0.01,
            loss: LossHyper::default(),
            prune_weight: 0.0,
        }
    }
}

/// Raw density (or opacity) every geometry parameter starts from.
pub fn initial_raw_density() -> f64 {
    math::softplus_inv(0.1)
}

const INITIAL_RAW_OPACITY: f64 = -2.0;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_m", self.d_m),
            ("d_s", self.d_s),
            ("n_k", self.n_k),
            ("n_samples", self.n_samples),
            ("ray_batch", self.ray_batch),
            ("num_freqs", self.num_freqs),
            ("token_hidden", self.token_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be positive")));
        }
        if self.grid_resolution < 2 {
            return Err(Error::Invalid("grid_resolution must be at least 2".into()));
        }
        if self.backend == Backend::Splat && (self.splat_count == 0 || !(self.splat_radius > 0.0)) {
            return Err(Error::Invalid("splat_count and splat_radius must be positive".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("geometry_learning_rate", self.geometry_learning_rate),
            ("scene_bound", self.scene_bound),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.view_fraction > 0.0 && self.view_fraction <= 1.0) {
            return Err(Error::Invalid(format!("view_fraction must lie in (0, 1], got {}", self.view_fraction)));
        }
        if !(self.init_std >= 0.0) || !(self.prune_weight >= 0.0) {
            return Err(Error::Invalid("init_std and prune_weight must be non-negative".into()));
        }
        self.adam.validate()
    }

    fn stage2_render_options(&self) -> RenderOptions {
        RenderOptions {
            n_samples: self.n_samples,
            jitter: false,
            color: false,
            feature: true,
            prune_weight: self.prune_weight,
        }
    }
}

/// Adam moments per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub geometry: OptimizerState,
    pub color: OptimizerState,
    pub feature: OptimizerState,
    pub background: OptimizerState,
    pub query_mlp: OptimizerState,
    pub semantic_mlp: OptimizerState,
}

impl Optimizers {
    fn for_model(field: &FieldModel, bank: &TokenBank) -> Self {
        let (g, c, f, b) = field.params();
        Self {
            geometry: OptimizerState::new(g.len()),
            color: OptimizerState::new(c.len()),
            feature: OptimizerState::new(f.len()),
            background: OptimizerState::new(b.len()),
            query_mlp: OptimizerState::new(bank.query_mlp.params.len()),
            semantic_mlp: OptimizerState::new(bank.semantic_mlp.params.len()),
        }
    }

    /// `(name, state)` pairs in a fixed order.
    pub fn groups(&self) -> [(&'static str, &OptimizerState); 6] {
        [
            ("geometry", &self.geometry),
            ("color", &self.color),
            ("feature", &self.feature),
            ("background", &self.background),
            ("query_mlp", &self.query_mlp),
            ("semantic_mlp", &self.semantic_mlp),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut OptimizerState); 6] {
        [
            ("geometry", &mut self.geometry),
            ("color", &mut self.color),
            ("feature", &mut self.feature),
            ("background", &mut self.background),
            ("query_mlp", &mut self.query_mlp),
            ("semantic_mlp", &mut self.semantic_mlp),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub step: usize,
    pub mse: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub view: usize,
    pub loss: LossBreakdown,
    pub wall_ms: f64,
}

/// Stage-two loss history as CSV.
pub fn loss_history_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("step,l_focal,l_dice,l_feature,l_extra,l_total,wall_ms\n");
    for r in records {
        let l = &r.loss;
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3}\n",
            r.step, l.l_focal, l.l_dice, l.l_feature, l.l_extra, l.l_total, r.wall_ms
        ));
    }
    out
}

pub fn geometry_history_csv(records: &[GeometryRecord]) -> String {
    let mut out = String::from("step,mse,wall_ms\n");
    for r in records {
        out.push_str(&format!("{},{},{:.3}\n", r.step, r.mse, r.wall_ms));
    }
    out
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub field: FieldModel,
    pub bank: TokenBank,
    pub optim: Optimizers,
    pub rng: ChaCha8Rng,
    pub geometry_steps: usize,
    pub mask_steps: usize,
    /// Steps dropped because a gradient was not finite.
    pub skipped_steps: usize,
}

impl TrainState {
    /// Fresh model seeded from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bounds = Aabb::cube(config.scene_bound);
        let field = match config.backend {
            Backend::Grid => {
                let n = config.grid_resolution;
                FieldModel::Grid(GridField::initialized(
                    [n; 3],
                    bounds,
                    config.d_m,
                    initial_raw_density(),
                    config.init_std,
                    &mut rng,
                )?)
            }
            Backend::Splat => FieldModel::Splat(SplatCloud::scattered(
                config.splat_count,
                bounds,
                config.splat_radius,
                config.d_m,
                INITIAL_RAW_OPACITY,
                config.init_std,
                &mut rng,
            )?),
        };
        let bank = TokenBank::new(config.n_k, config.num_freqs, config.token_hidden, config.d_m, config.d_s, &mut rng)?;
        let optim = Optimizers::for_model(&field, &bank);
        Ok(Self {
            config,
            field,
            bank,
            optim,
            rng,
            geometry_steps: 0,
            mask_steps: 0,
            skipped_steps: 0,
        })
    }

    /// Copy that keeps the trained geometry (and its optimizer moments) but
    /// starts a fresh mask field and token bank of width `d_m`. Lets one
    /// stage-one run feed several stage-two runs.
    pub fn with_mask_dim(&self, d_m: usize) -> Result<Self> {
        let mut config = self.config.clone();
        config.d_m = d_m;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d61_736b_6669_656c);
        let normal = rand_distr::Normal::new(0.0, config.init_std).map_err(|e| Error::Invalid(e.to_string()))?;
        let field = match &self.field {
            FieldModel::Grid(g) => {
                let n = g.density.len();
                let feature = (0..n * d_m).map(|_| rand_distr::Distribution::sample(&normal, &mut rng)).collect();
                FieldModel::Grid(GridField::from_parts(
                    g.resolution(),
                    g.bounds(),
                    d_m,
                    g.density.clone(),
                    g.color.clone(),
                    feature,
                    vec![0.0; d_m],
                )?)
            }
            FieldModel::Splat(s) => {
                let n = s.radii.len();
                let feature = (0..n * d_m).map(|_| rand_distr::Distribution::sample(&normal, &mut rng)).collect();
                FieldModel::Splat(SplatCloud::new(
                    d_m,
                    s.positions.clone(),
                    s.radii.clone(),
                    s.opacity_raw.clone(),
                    s.colors.clone(),
                    feature,
                    vec![0.0; d_m],
                )?)
            }
        };
        let bank = TokenBank::new(config.n_k, config.num_freqs, config.token_hidden, d_m, config.d_s, &mut rng)?;
        let fresh = Optimizers::for_model(&field, &bank);
        let optim = Optimizers {
            geometry: self.optim.geometry.clone(),
            color: self.optim.color.clone(),
            ..fresh
        };
        Ok(Self {
            config,
            field,
            bank,
            optim,
            rng,
            geometry_steps: self.geometry_steps,
            mask_steps: 0,
            skipped_steps: self.skipped_steps,
        })
    }

    /// Runs `steps` more photometric steps.
    pub fn run_geometry(&mut self, ds: &SceneDataset, steps: usize) -> Result<Vec<GeometryRecord>> {
        let views: Vec<&ViewRecord> = ds.views_in(Split::Train).collect();
        if views.is_empty() {
            return Err(Error::Invalid("geometry training needs at least one training view".into()));
        }
        ds.validate()?;
        let start = Instant::now();
        let mut history = Vec::with_capacity(steps);
        let lr = self.config.geometry_learning_rate;
        let rasters: Vec<RenderPlan> = match &self.field {
            FieldModel::Splat(_) => {
                let opts = RenderOptions::default();
                views.iter().map(|v| self.field.plan(&v.camera, &opts, &mut self.rng)).collect()
            }
            FieldModel::Grid(_) => Vec::new(),
        };
        for _ in 0..steps {
            let (mse, grads) = match self.field {
                FieldModel::Grid(_) => self.grid_photometric_step(&views)?,
                FieldModel::Splat(_) => {
                    let k = self.rng.random_range(0..views.len());
                    let opts = RenderOptions {
                        feature: false,
                        ..RenderOptions::default()
                    };
                    photometric_objective(&self.field, &rasters[k], &opts, &views[k].image)?
                }
            };
            self.geometry_steps += 1;
            if finite(&grads.geometry) && finite(&grads.color) {
                let params = self.field.params_mut();
                adam_step(params.geometry, &grads.geometry, &mut self.optim.geometry, lr, &self.config.adam)?;
                adam_step(params.color, &grads.color, &mut self.optim.color, lr, &self.config.adam)?;
            } else {
                self.skip();
            }
            history.push(GeometryRecord {
                step: self.geometry_steps,
                mse,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        Ok(history)
    }

    fn grid_photometric_step(&mut self, views: &[&ViewRecord]) -> Result<(f64, FieldGrads)> {
        let hw = views[0].camera.pixel_count();
        let total = views.len() * hw;
        let batch = self.config.ray_batch;
        let mut rays = Vec::with_capacity(batch);
        let mut ranges = Vec::with_capacity(batch);
        let mut target = Vec::with_capacity(3 * batch);
        for _ in 0..batch {
            let idx = self.rng.random_range(0..total);
            let (v, p) = (views[idx / hw], idx % hw);
            let cam = &v.camera;
            rays.push(cam.ray(p / cam.width(), p % cam.width()));
            ranges.push((cam.near(), cam.far()));
            target.extend_from_slice(&v.image[3 * p..3 * p + 3]);
        }
        let plan = RenderPlan::Rays(SamplePlan::for_rays(rays, &ranges, self.config.n_samples, true, &mut self.rng));
        let opts = RenderOptions {
            n_samples: self.config.n_samples,
            jitter: true,
            color: true,
            feature: false,
            prune_weight: 0.0,
        };
        photometric_objective(&self.field, &plan, &opts, &target)
    }

    fn skip(&mut self) {
        self.skipped_steps += 1;
        log::warn!("non-finite gradient, step skipped ({} so far)", self.skipped_steps);
    }

    /// Runs `steps` more distillation steps. Density and color are never
    /// written.
    pub fn run_maskfield(&mut self, ds: &SceneDataset, steps: usize) -> Result<Vec<LossRecord>> {
        ds.validate()?;
        if ds.d_s != self.bank.d_s {
            return Err(Error::Shape(format!(
                "dataset embeddings have d_s={} but the token bank has d_s={}",
                ds.d_s, self.bank.d_s
            )));
        }
        let views = supervision_views(ds, self.config.view_fraction, self.config.seed)?;
        for v in &views {
            if v.masks.len() > self.bank.n_k {
                return Err(Error::Capacity {
                    view: v.id,
                    masks: v.masks.len(),
                    tokens: self.bank.n_k,
                });
            }
        }
        let opts = self.config.stage2_render_options();
        let plans: Vec<RenderPlan> = views.iter().map(|v| self.field.plan(&v.camera, &opts, &mut self.rng)).collect();
        let start = Instant::now();
        let mut history = Vec::with_capacity(steps);
        let lr = self.config.learning_rate;
        for _ in 0..steps {
            let k = self.rng.random_range(0..views.len());
            let out = distill_objective(&self.field, &self.bank, &plans[k], &opts, &views[k].masks, &self.config.loss)?;
            self.mask_steps += 1;
            let ok = finite(&out.field_grads.feature)
                && finite(&out.field_grads.background)
                && finite(&out.token_grads.query_mlp)
                && finite(&out.token_grads.semantic_mlp);
            if ok {
                let cfg = self.config.adam;
                let params = self.field.params_mut();
                adam_step(params.feature, &out.field_grads.feature, &mut self.optim.feature, lr, &cfg)?;
                adam_step(params.background, &out.field_grads.background, &mut self.optim.background, lr, &cfg)?;
                adam_step(&mut self.bank.query_mlp.params, &out.token_grads.query_mlp, &mut self.optim.query_mlp, lr, &cfg)?;
                adam_step(
                    &mut self.bank.semantic_mlp.params,
                    &out.token_grads.semantic_mlp,
                    &mut self.optim.semantic_mlp,
                    lr,
                    &cfg,
                )?;
            } else {
                self.skip();
            }
            history.push(LossRecord {
                step: self.mask_steps,
                view: views[k].id,
                loss: out.breakdown,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        Ok(history)
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Training views that supply masks: the first `ceil(fraction * V)` of a
/// seeded permutation, returned in dataset order.
pub fn supervision_views(ds: &SceneDataset, fraction: f64, seed: u64) -> Result<Vec<&ViewRecord>> {
    let train: Vec<&ViewRecord> = ds.views_in(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Invalid("mask training needs at least one training view".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Invalid(format!("view_fraction must lie in (0, 1], got {fraction}")));
    }
    let count = ((fraction * train.len() as f64).ceil() as usize).clamp(1, train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x76_6965_7773));
    let mut chosen = order[..count].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| train[i]).collect())
}

/// Mean squared color error of a rendered plan against `target`
/// (`pixels x 3`) and its gradient.
pub fn photometric_objective(
    field: &FieldModel,
    plan: &RenderPlan,
    opts: &RenderOptions,
    target: &[f64],
) -> Result<(f64, FieldGrads)> {
    let view = field.render(plan, opts)?;
    if target.len() != view.color.len() {
        return Err(Error::Shape(format!(
            "color target has {} values, render has {}",
            target.len(),
            view.color.len()
        )));
    }
    let n = target.len() as f64;
    let mut upstream = RenderedView::zeros(view.height, view.width, view.d_m);
    let mut mse = 0.0;
    for ((g, &c), &t) in upstream.color.iter_mut().zip(&view.color).zip(target) {
        let r = c - t;
        mse += r * r;
        *g = 2.0 * r / n;
    }
    let grads = field.backprop(plan, opts, &upstream)?;
    Ok((mse / n, grads))
}

/// Forward products of the distillation pipeline for one view.
#[derive(Debug, Clone)]
pub struct DistillForward {
    pub view: RenderedView,
    pub tokens: Tokens,
    /// `n_k x pixels`
    pub probs: Vec<f64>,
}

pub fn distill_forward(
    field: &FieldModel,
    bank: &TokenBank,
    plan: &RenderPlan,
    opts: &RenderOptions,
) -> Result<DistillForward> {
    let view = field.render(plan, opts)?;
    let tokens = bank.compute_tokens();
    let probs = mask_logits(&view.feature, view.height, view.width, view.d_m, &tokens.queries)?.probabilities();
    Ok(DistillForward { view, tokens, probs })
}

#[derive(Debug, Clone)]
pub struct DistillOutput {
    pub breakdown: LossBreakdown,
    pub matching: MatchResult,
    pub field_grads: FieldGrads,
    pub token_grads: TokenGrads,
}

/// Distillation loss for one view with its Hungarian matching, plus
/// gradients for every field group and both token MLPs. The matching is
/// held fixed for the backward pass.
pub fn distill_objective(
    field: &FieldModel,
    bank: &TokenBank,
    plan: &RenderPlan,
    opts: &RenderOptions,
    target: &MaskSet,
    hyper: &LossHyper,
) -> Result<DistillOutput> {
    let fwd = distill_forward(field, bank, plan, opts)?;
    let pred = predictions(&fwd)?;
    let (breakdown, matching) = total_loss(&pred, target, hyper)?;
    let (field_grads, token_grads) = distill_backward(field, bank, plan, opts, &fwd, target, &matching, hyper)?;
    Ok(DistillOutput {
        breakdown,
        matching,
        field_grads,
        token_grads,
    })
}

/// Loss under a fixed matching; smooth in every parameter, which is what
/// finite differences need.
pub fn distill_loss_fixed(
    field: &FieldModel,
    bank: &TokenBank,
    plan: &RenderPlan,
    opts: &RenderOptions,
    target: &MaskSet,
    matching: &MatchResult,
    hyper: &LossHyper,
) -> Result<LossBreakdown> {
    let fwd = distill_forward(field, bank, plan, opts)?;
    loss_for_matching(&predictions(&fwd)?, target, matching, hyper)
}

fn predictions(fwd: &DistillForward) -> Result<Predictions<'_>> {
    Predictions::new(
        fwd.tokens.n_k,
        fwd.view.pixel_count(),
        fwd.tokens.d_s,
        &fwd.probs,
        &fwd.tokens.semantics,
    )
}

#[allow(clippy::too_many_arguments)]
fn distill_backward(
    field: &FieldModel,
    bank: &TokenBank,
    plan: &RenderPlan,
    opts: &RenderOptions,
    fwd: &DistillForward,
    target: &MaskSet,
    matching: &MatchResult,
    hyper: &LossHyper,
) -> Result<(FieldGrads, TokenGrads)> {
    let pred = predictions(fwd)?;
    let (g_probs, g_sem) = loss_gradients(&pred, target, matching, hyper)?;
    let g_logits: Vec<f64> = g_probs.iter().zip(&fwd.probs).map(|(g, p)| g * p * (1.0 - p)).collect();
    let (token_grads, g_feature) = backprop_tokens(bank, &fwd.tokens, &fwd.view.feature, &g_logits, &g_sem)?;
    let mut upstream = RenderedView::zeros(fwd.view.height, fwd.view.width, fwd.view.d_m);
    upstream.feature = g_feature;
    let field_grads = field.backprop(plan, opts, &upstream)?;
    Ok((field_grads, token_grads))
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub geometry_history: Vec<GeometryRecord>,
    pub mask_history: Vec<LossRecord>,
}

/// Stage one from a fresh model.
pub fn train_geometry(ds: &SceneDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut config = config.clone();
    config.d_s = ds.d_s;
    let mut state = TrainState::new(config)?;
    let geometry_history = state.run_geometry(ds, state.config.stage1_steps)?;
    Ok(TrainOutcome {
        state,
        geometry_history,
        mask_history: Vec::new(),
    })
}

/// Stage two on top of a state whose geometry is already trained.
pub fn train_maskfield(state: TrainState, ds: &SceneDataset) -> Result<TrainOutcome> {
    let mut state = state;
    let mask_history = state.run_maskfield(ds, state.config.stage2_steps)?;
    Ok(TrainOutcome {
        state,
        geometry_history: Vec::new(),
        mask_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            view_fraction: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = TrainConfig {
            backend: Backend::Splat,
            d_m: 4,
            ..TrainConfig::default()
        };
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: TrainConfig = serde_json::from_str(r#"{"d_m": 8}"#).unwrap();
        assert_eq!(partial.d_m, 8);
        assert_eq!(partial.n_k, 64);
    }

    #[test]
    fn initial_density() {
        assert!((math::softplus(initial_raw_density()) - 0.1).abs() < 1e-12);
    }
}
