//! Central-difference checks of the analytic gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{distill_loss_fixed, distill_objective, photometric_objective};
use crate::distill::{LossHyper, MaskSet};
use crate::fields::{
    Aabb, Backend, CameraModel, FieldGrads, FieldModel, GridField, RenderOptions, SplatCloud,
};
use crate::tokens::{TokenBank, TokenGrads};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub checked: usize,
    pub n_params: usize,
}

/// Compares `analytic` against central differences of `loss` on the listed
/// coordinates. Relative error is `|a - n| / max(1, |a|, |n|)`.
pub fn gradcheck<F>(mut loss: F, params: &[f64], analytic: &[f64], coords: &[usize], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!("{} params but {} gradient entries", params.len(), analytic.len())));
    }
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut theta = params.to_vec();
    let mut worst = (0.0, 0usize);
    for &k in coords {
        if k >= params.len() {
            return Err(Error::Invalid(format!("coordinate {k} out of range")));
        }
        theta[k] = params[k] + eps;
        let up = loss(&theta)?;
        theta[k] = params[k] - eps;
        let down = loss(&theta)?;
        theta[k] = params[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {k}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[k];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > worst.0 {
            worst = (err, k);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_coord: worst.1,
        checked: coords.len(),
        n_params: params.len(),
    })
}

/// `count` distinct coordinates out of `len`, sorted.
pub fn random_coords<R: Rng + ?Sized>(len: usize, count: usize, rng: &mut R) -> Vec<usize> {
    let mut v = sample(rng, len, count.min(len)).into_vec();
    v.sort_unstable();
    v
}

fn flatten(field: &FieldModel, bank: &TokenBank) -> Vec<f64> {
    let (g, c, f, b) = field.params();
    [g, c, f, b, &bank.query_mlp.params, &bank.semantic_mlp.params].concat()
}

fn unflatten(field: &mut FieldModel, bank: &mut TokenBank, flat: &[f64]) {
    let p = field.params_mut();
    let mut rest = flat;
    for dst in [p.geometry, p.color, p.feature, p.background, &mut bank.query_mlp.params, &mut bank.semantic_mlp.params] {
        let (head, tail) = rest.split_at(dst.len());
        dst.copy_from_slice(head);
        rest = tail;
    }
}

fn flatten_grads(f: &FieldGrads, t: &TokenGrads) -> Vec<f64> {
    [&f.geometry[..], &f.color, &f.feature, &f.background, &t.query_mlp, &t.semantic_mlp].concat()
}

/// Full pipeline check on a tiny scene: photometric error plus the
/// distillation loss (matching frozen at the base point), differentiated
/// with respect to every field group and both token MLPs. Checks every
/// coordinate with a nonzero analytic gradient plus `extra` random ones.
pub fn pipeline_gradcheck(backend: Backend, seed: u64, extra: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |s: f64| Normal::new(0.0, s).expect("positive std");
    let (d_m, d_s, n_k, side) = (3usize, 4usize, 4usize, 4usize);
    let bounds = Aabb::cube(0.5);
    let mut field = match backend {
        Backend::Grid => {
            let mut g = GridField::initialized([8; 3], bounds, d_m, 0.0, 0.5, &mut rng)?;
            for d in &mut g.density {
                *d = rng.random_range(-1.0..2.5);
            }
            FieldModel::Grid(g)
        }
        Backend::Splat => {
            let mut s = SplatCloud::scattered(24, bounds, 0.35, d_m, 0.0, 0.5, &mut rng)?;
            for o in &mut s.opacity_raw {
                *o = rng.random_range(-2.0..1.5);
            }
            FieldModel::Splat(s)
        }
    };
    {
        let p = field.params_mut();
        for b in p.background.iter_mut() {
            *b = normal(0.3).sample(&mut rng);
        }
    }
    let mut bank = TokenBank::new(n_k, 2, 8, d_m, d_s, &mut rng)?;
    let camera = CameraModel::look_at([0.3, 0.4, 2.0], [0.0; 3], [0.0, 1.0, 0.0], 4.0, side, side, 1.0, 3.0)?;
    let hw = side * side;
    let masks: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..hw).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect())
        .collect();
    let embeddings: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let v: Vec<f64> = (0..d_s).map(|_| normal(1.0).sample(&mut rng)).collect();
            let n = crate::math::norm(&v);
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let target = MaskSet {
        view_id: 0,
        height: side,
        width: side,
        masks,
        embeddings,
    };
    let rgb: Vec<f64> = (0..3 * hw).map(|_| rng.random::<f64>()).collect();
    let hyper = LossHyper::default();
    let opts = RenderOptions {
        n_samples: 16,
        ..RenderOptions::default()
    };
    let plan = field.plan(&camera, &opts, &mut rng);

    let out = distill_objective(&field, &bank, &plan, &opts, &target, &hyper)?;
    let (_, photo) = photometric_objective(&field, &plan, &opts, &rgb)?;
    let mut analytic = flatten_grads(&out.field_grads, &out.token_grads);
    let photo_flat = flatten_grads(&photo, &TokenGrads {
        query_mlp: vec![0.0; out.token_grads.query_mlp.len()],
        semantic_mlp: vec![0.0; out.token_grads.semantic_mlp.len()],
    });
    for (a, p) in analytic.iter_mut().zip(photo_flat) {
        *a += p;
    }
    let matching = out.matching;
    let base = flatten(&field, &bank);

    let mut coords: Vec<usize> = (0..base.len()).filter(|&k| analytic[k] != 0.0).collect();
    coords.extend(random_coords(base.len(), extra, &mut rng));
    coords.sort_unstable();
    coords.dedup();

    let loss = |theta: &[f64]| -> Result<f64> {
        unflatten(&mut field, &mut bank, theta);
        let l = distill_loss_fixed(&field, &bank, &plan, &opts, &target, &matching, &hyper)?;
        let (mse, _) = photometric_objective(&field, &plan, &opts, &rgb)?;
        Ok(l.l_total + mse)
    };
    gradcheck(loss, &base, &analytic, &coords, 1e-4)
}
