//! End-to-end runs: synthetic scene, two-stage training, held-out
//! evaluation, object queries and the mask-feature width sweep.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{SceneDataset, Split, ViewRecord};
use crate::fields::{CameraModel, RenderOptions, RenderedView};
use crate::inference::{query_probs, segment_probs, lerf_relevance, relevance, QueryConfig, QueryResult, SegmentConfig, SegmentationMap};
use crate::metrics::{EvalReport, Evaluator};
use crate::synthetic::{build_dataset, generate_scene, SceneParams, SupervisionParams};
use crate::tokens::mask_logits;
use crate::trainer::{train_geometry, train_maskfield, GeometryRecord, LossRecord, TrainConfig, TrainState};
use crate::{Error, Result};

/// Deterministic full-view render for inference (no jitter, no pruning).
pub fn render_view(state: &TrainState, camera: &CameraModel, color: bool) -> Result<RenderedView> {
    let opts = RenderOptions {
        n_samples: state.config.n_samples,
        jitter: false,
        color,
        feature: true,
        prune_weight: 0.0,
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let plan = state.field.plan(camera, &opts, &mut rng);
    state.field.render(&plan, &opts)
}

/// Mask probabilities (`n_k x pixels`) of a rendered view.
pub fn view_mask_probs(state: &TrainState, view: &RenderedView) -> Result<Vec<f64>> {
    let tokens = state.bank.compute_tokens();
    Ok(mask_logits(&view.feature, view.height, view.width, view.d_m, &tokens.queries)?.probabilities())
}

/// Labels one camera with the dataset's class vocabulary.
pub fn segment_camera(
    state: &TrainState,
    ds: &SceneDataset,
    camera: &CameraModel,
    cfg: &SegmentConfig,
) -> Result<SegmentationMap> {
    let classes = ds
        .classes
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("dataset `{}` has no class embeddings", ds.scene)))?;
    let view = render_view(state, camera, false)?;
    let probs = view_mask_probs(state, &view)?;
    let tokens = state.bank.compute_tokens();
    let p = relevance(&tokens.semantics, tokens.d_s, classes, cfg.tau)?;
    segment_probs(&view, &probs, &p, classes.len(), cfg)
}

/// Mask of everything relevant to `query` in one camera.
pub fn query_camera(
    state: &TrainState,
    ds: &SceneDataset,
    camera: &CameraModel,
    query: &[f64],
    cfg: &QueryConfig,
) -> Result<QueryResult> {
    let canonicals = ds.canonicals.as_ref().map(|c| c.embeddings.clone()).unwrap_or_default();
    if query.len() != state.bank.d_s {
        return Err(Error::Shape(format!(
            "query has dimension {} but tokens have d_s={}",
            query.len(),
            state.bank.d_s
        )));
    }
    let view = render_view(state, camera, false)?;
    let probs = view_mask_probs(state, &view)?;
    let tokens = state.bank.compute_tokens();
    let rel = (0..tokens.n_k)
        .map(|i| lerf_relevance(&tokens.semantics[i * tokens.d_s..(i + 1) * tokens.d_s], query, &canonicals))
        .collect();
    query_probs(view.height, view.width, &probs, rel, cfg)
}

/// Segments every view of `split` and scores it against the ground truth.
pub fn evaluate(
    state: &TrainState,
    ds: &SceneDataset,
    split: Split,
    cfg: &SegmentConfig,
    band: usize,
) -> Result<EvalReport> {
    let classes = ds
        .classes
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("dataset `{}` has no class embeddings", ds.scene)))?;
    let mut ev = Evaluator::new(classes.len(), band);
    let views: Vec<&ViewRecord> = ds.views_in(split).collect();
    for v in &views {
        let gt = v
            .gt_labels
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("view {} has no ground-truth labels", v.id)))?;
        let seg = segment_camera(state, ds, &v.camera, cfg)?;
        ev.add_view(&seg.labels, gt, seg.height, seg.width)?;
    }
    Ok(ev.report(&classes.names))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub scene: SceneParams,
    pub supervision: SupervisionParams,
    pub train: TrainConfig,
    pub segment: SegmentConfig,
    /// Boundary band half-width for mBIoU, pixels.
    pub band: usize,
}

impl Scenario {
    /// Scene and supervision only; training settings from `train`.
    pub fn new(seed: u64, scene: SceneParams, train: TrainConfig) -> Self {
        Self {
            seed,
            scene,
            supervision: SupervisionParams {
                seed,
                ..SupervisionParams::default()
            },
            train,
            segment: SegmentConfig::default(),
            band: 2,
        }
    }

    pub fn dataset(&self) -> Result<SceneDataset> {
        build_dataset(&generate_scene(self.seed, &self.scene)?, &self.supervision)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub dataset: SceneDataset,
    pub state: TrainState,
    pub geometry_history: Vec<GeometryRecord>,
    pub mask_history: Vec<LossRecord>,
    pub report: EvalReport,
    pub geometry_secs: f64,
    pub mask_secs: f64,
}

/// Generates, trains both stages and evaluates on the held-out views.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioOutcome> {
    let dataset = s.dataset()?;
    let t0 = Instant::now();
    let geo = train_geometry(&dataset, &s.train)?;
    let geometry_secs = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let out = train_maskfield(geo.state, &dataset)?;
    let mask_secs = t1.elapsed().as_secs_f64();
    let report = evaluate(&out.state, &dataset, Split::Test, &s.segment, s.band)?;
    Ok(ScenarioOutcome {
        dataset,
        state: out.state,
        geometry_history: geo.geometry_history,
        mask_history: out.mask_history,
        report,
        geometry_secs,
        mask_secs,
    })
}

pub const BENCH_HEADER: &str = "d_m,miou,mbiou,acc,train_seconds,render_ms_per_view";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub d_m: usize,
    pub miou: f64,
    pub mbiou: f64,
    pub acc: f64,
    /// Stage-two wall time; stage one is shared across rows.
    pub train_seconds: f64,
    /// Fastest of the repeats, feature-only render of a held-out view.
    pub render_ms_per_view: f64,
}

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.3},{:.3}",
            self.d_m, self.miou, self.mbiou, self.acc, self.train_seconds, self.render_ms_per_view
        )
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    std::iter::once(BENCH_HEADER.to_string())
        .chain(rows.iter().map(BenchRow::csv_row))
        .map(|l| l + "\n")
        .collect()
}

/// Fastest feature-only render time over `repeats` passes of `cameras`,
/// in milliseconds per view.
pub fn time_render(state: &TrainState, cameras: &[&CameraModel], repeats: usize) -> Result<f64> {
    if cameras.is_empty() {
        return Err(Error::Invalid("no views to time".into()));
    }
    let opts = RenderOptions {
        n_samples: state.config.n_samples,
        jitter: false,
        color: false,
        feature: true,
        prune_weight: 0.0,
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let plans: Vec<_> = cameras.iter().map(|c| state.field.plan(c, &opts, &mut rng)).collect();
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        for p in &plans {
            std::hint::black_box(state.field.render(p, &opts)?);
        }
        best = best.min(t.elapsed().as_secs_f64() * 1e3 / plans.len() as f64);
    }
    Ok(best)
}

/// Trains one mask field per width on top of a shared trained geometry and
/// scores each on the held-out views.
pub fn bench_sweep(
    geometry: &TrainState,
    ds: &SceneDataset,
    dims: &[usize],
    segment: &SegmentConfig,
    band: usize,
    repeats: usize,
) -> Result<Vec<BenchRow>> {
    let cameras: Vec<&CameraModel> = ds.views_in(Split::Test).map(|v| &v.camera).collect();
    dims.iter()
        .map(|&d_m| {
            let state = geometry.with_mask_dim(d_m)?;
            let t = Instant::now();
            let out = train_maskfield(state, ds)?;
            let train_seconds = t.elapsed().as_secs_f64();
            let report = evaluate(&out.state, ds, Split::Test, segment, band)?;
            let render_ms_per_view = time_render(&out.state, &cameras, repeats)?;
            log::info!("d_m={d_m}: miou {:.4}, {train_seconds:.1}s, {render_ms_per_view:.2} ms/view", report.miou);
            Ok(BenchRow {
                d_m,
                miou: report.miou,
                mbiou: report.mbiou,
                acc: report.acc,
                train_seconds,
                render_ms_per_view,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Backend;

    fn tiny() -> Scenario {
        let scene = SceneParams {
            num_objects: 2,
            num_cameras: 8,
            width: 16,
            height: 16,
            focal_px: 20.0,
            ..SceneParams::default()
        };
        let train = TrainConfig {
            backend: Backend::Grid,
            d_m: 4,
            n_k: 8,
            stage1_steps: 5,
            stage2_steps: 5,
            grid_resolution: 8,
            n_samples: 8,
            ray_batch: 64,
            token_hidden: 8,
            num_freqs: 2,
            ..TrainConfig::default()
        };
        Scenario::new(5, scene, train)
    }

    #[test]
    fn scenario_runs_and_reports() {
        let out = run_scenario(&tiny()).unwrap();
        assert_eq!(out.report.n_views, 2);
        assert_eq!(out.mask_history.len(), 5);
        assert!(out.mask_history.iter().all(|r| r.loss.l_total.is_finite()));
    }

    #[test]
    fn bench_has_one_row_per_width() {
        let s = tiny();
        let ds = s.dataset().unwrap();
        let geo = train_geometry(&ds, &s.train).unwrap();
        let rows = bench_sweep(&geo.state, &ds, &[2, 4], &s.segment, 2, 1).unwrap();
        let csv = bench_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], BENCH_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("2,"));
    }

    #[test]
    fn mask_width_swap_keeps_geometry() {
        let s = tiny();
        let ds = s.dataset().unwrap();
        let geo = train_geometry(&ds, &s.train).unwrap().state;
        let swapped = geo.with_mask_dim(3).unwrap();
        assert_eq!(swapped.field.d_m(), 3);
        assert_eq!(swapped.field.params().0, geo.field.params().0);
        assert_eq!(swapped.field.params().1, geo.field.params().1);
    }
}
