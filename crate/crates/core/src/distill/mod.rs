//! Distillation objective: matched-pair mask and embedding losses, a penalty
//! driving unmatched masks to zero, and the bipartite matching that pairs
//! predictions with supervision masks.

mod loss;
mod matching;

pub use loss::{
    cosine_loss, cosine_loss_grad, dice_loss, dice_loss_grad, extra_loss, focal_loss,
    focal_loss_grad, PROB_EPS,
};
pub use matching::{brute_force_match, hungarian_match, CostMatrix, MatchResult};

use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

/// Supervision for one view: masks with values in `[0, 1]` and one unit
/// embedding per mask. An empty set is allowed and only drives every
/// prediction toward zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub view_id: usize,
    pub height: usize,
    pub width: usize,
    pub masks: Vec<Vec<f64>>,
    pub embeddings: Vec<Vec<f64>>,
}

impl MaskSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.first().map_or(0, |e| e.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.masks.len() != self.embeddings.len() {
            return Err(Error::Shape(format!(
                "view {}: {} masks but {} embeddings",
                self.view_id,
                self.masks.len(),
                self.embeddings.len()
            )));
        }
        let hw = self.height * self.width;
        let d = self.embedding_dim();
        for (j, (m, e)) in self.masks.iter().zip(&self.embeddings).enumerate() {
            if m.len() != hw {
                return Err(Error::Shape(format!(
                    "view {} mask {j} has {} pixels, expected {hw}",
                    self.view_id,
                    m.len()
                )));
            }
            if m.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Invalid(format!("view {} mask {j} has values outside [0,1]", self.view_id)));
            }
            if e.len() != d {
                return Err(Error::Shape(format!(
                    "view {} embedding {j} has dimension {}, expected {d}",
                    self.view_id,
                    e.len()
                )));
            }
            if (math::norm(e) - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(format!("view {} embedding {j} is not unit length", self.view_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHyper {
    /// Dice weight.
    pub lambda_dice: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Weight of the unmatched-mask penalty.
    pub w_extra: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self {
            lambda_dice: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            w_extra: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_focal: f64,
    pub l_dice: f64,
    pub l_feature: f64,
    pub l_mask: f64,
    pub l_distill: f64,
    pub l_extra: f64,
    pub l_total: f64,
}

/// Predicted mask probabilities (`n_k x pixels`) and semantic tokens
/// (`n_k x d_s`) for one view.
#[derive(Debug, Clone, Copy)]
pub struct Predictions<'a> {
    pub n_k: usize,
    pub pixels: usize,
    pub d_s: usize,
    pub probs: &'a [f64],
    pub semantics: &'a [f64],
}

impl<'a> Predictions<'a> {
    pub fn new(n_k: usize, pixels: usize, d_s: usize, probs: &'a [f64], semantics: &'a [f64]) -> Result<Self> {
        if probs.len() != n_k * pixels || semantics.len() != n_k * d_s {
            return Err(Error::Shape(format!(
                "predictions need {}x{} probabilities and {}x{} semantics",
                n_k, pixels, n_k, d_s
            )));
        }
        Ok(Self {
            n_k,
            pixels,
            d_s,
            probs,
            semantics,
        })
    }

    pub fn mask(&self, i: usize) -> &'a [f64] {
        &self.probs[i * self.pixels..(i + 1) * self.pixels]
    }

    pub fn semantic(&self, i: usize) -> &'a [f64] {
        &self.semantics[i * self.d_s..(i + 1) * self.d_s]
    }

    fn check_target(&self, target: &MaskSet) -> Result<()> {
        if target.height * target.width != self.pixels {
            return Err(Error::Shape(format!(
                "view {} masks have {} pixels but predictions have {}",
                target.view_id,
                target.height * target.width,
                self.pixels
            )));
        }
        if !target.is_empty() && target.embedding_dim() != self.d_s {
            return Err(Error::Shape(format!(
                "view {} embeddings have dimension {} but tokens have {}",
                target.view_id,
                target.embedding_dim(),
                self.d_s
            )));
        }
        if target.len() > self.n_k {
            return Err(Error::Capacity {
                view: target.view_id,
                masks: target.len(),
                tokens: self.n_k,
            });
        }
        Ok(())
    }
}

/// Matching cost `focal + lambda * dice + cosine` for every
/// (prediction, target) pair; the same per-pair quantity the loss sums.
pub fn pairwise_cost(pred: &Predictions<'_>, target: &MaskSet, hyper: &LossHyper) -> Result<CostMatrix> {
    pred.check_target(target)?;
    let j_count = target.len();
    let hw = pred.pixels as f64;
    let mut data = vec![0.0; pred.n_k * j_count];
    let mut pos = vec![0.0; pred.pixels];
    let mut neg = vec![0.0; pred.pixels];
    let target_sums: Vec<f64> = target.masks.iter().map(|m| m.iter().sum()).collect();
    for i in 0..pred.n_k {
        let m = pred.mask(i);
        let mut neg_sum = 0.0;
        let mut prob_sum = 0.0;
        for (u, &p) in m.iter().enumerate() {
            let (a, b, _, _) = loss::focal_terms(p, hyper.focal_gamma, hyper.focal_alpha);
            pos[u] = a;
            neg[u] = b;
            neg_sum += b;
            prob_sum += p;
        }
        for (j, t) in target.masks.iter().enumerate() {
            let mut focal = neg_sum;
            let mut inter = 0.0;
            for u in 0..pred.pixels {
                let tu = t[u];
                if tu != 0.0 {
                    focal += tu * (pos[u] - neg[u]);
                    inter += tu * m[u];
                }
            }
            let dice = loss::dice_from_sums(inter, prob_sum, target_sums[j]);
            let cos = cosine_loss(pred.semantic(i), &target.embeddings[j]);
            data[i * j_count + j] = focal / hw + hyper.lambda_dice * dice + cos;
        }
    }
    CostMatrix::new(pred.n_k, j_count, data)
}

/// Loss for a fixed assignment.
pub fn loss_for_matching(
    pred: &Predictions<'_>,
    target: &MaskSet,
    matching: &MatchResult,
    hyper: &LossHyper,
) -> Result<LossBreakdown> {
    pred.check_target(target)?;
    let pairs = matching.pairs.len().max(1) as f64;
    let mut l_focal = 0.0;
    let mut l_dice = 0.0;
    let mut l_feature = 0.0;
    for &(i, j) in &matching.pairs {
        l_focal += focal_loss(pred.mask(i), &target.masks[j], hyper.focal_gamma, hyper.focal_alpha)?;
        l_dice += dice_loss(pred.mask(i), &target.masks[j])?;
        l_feature += cosine_loss(pred.semantic(i), &target.embeddings[j]);
    }
    l_focal /= pairs;
    l_dice /= pairs;
    l_feature /= pairs;
    let l_extra = extra_loss(pred.probs, pred.pixels, &matching.unmatched_preds)?;
    let l_mask = l_focal + hyper.lambda_dice * l_dice;
    let l_distill = l_mask + l_feature;
    Ok(LossBreakdown {
        l_focal,
        l_dice,
        l_feature,
        l_mask,
        l_distill,
        l_extra,
        l_total: l_distill + hyper.w_extra * l_extra,
    })
}

/// Matches predictions to targets and evaluates the loss under that matching.
pub fn total_loss(pred: &Predictions<'_>, target: &MaskSet, hyper: &LossHyper) -> Result<(LossBreakdown, MatchResult)> {
    let cost = pairwise_cost(pred, target, hyper)?;
    let matching = hungarian_match(&cost)?;
    let breakdown = loss_for_matching(pred, target, &matching, hyper)?;
    Ok((breakdown, matching))
}

/// Gradient of `l_total` with respect to probabilities and semantic tokens,
/// holding the matching fixed.
pub fn loss_gradients(
    pred: &Predictions<'_>,
    target: &MaskSet,
    matching: &MatchResult,
    hyper: &LossHyper,
) -> Result<(Vec<f64>, Vec<f64>)> {
    pred.check_target(target)?;
    let hw = pred.pixels;
    let mut g_probs = vec![0.0; pred.probs.len()];
    let mut g_sem = vec![0.0; pred.semantics.len()];
    let inv_pairs = 1.0 / matching.pairs.len().max(1) as f64;
    for &(i, j) in &matching.pairs {
        let gf = focal_loss_grad(pred.mask(i), &target.masks[j], hyper.focal_gamma, hyper.focal_alpha)?;
        let gd = dice_loss_grad(pred.mask(i), &target.masks[j])?;
        let out = &mut g_probs[i * hw..(i + 1) * hw];
        for u in 0..hw {
            out[u] += inv_pairs * (gf[u] + hyper.lambda_dice * gd[u]);
        }
        let gc = cosine_loss_grad(pred.semantic(i), &target.embeddings[j]);
        for (g, c) in g_sem[i * pred.d_s..(i + 1) * pred.d_s].iter_mut().zip(gc) {
            *g += inv_pairs * c;
        }
    }
    let scale = hyper.w_extra * 2.0 / hw as f64;
    for &i in &matching.unmatched_preds {
        for (g, p) in g_probs[i * hw..(i + 1) * hw].iter_mut().zip(pred.mask(i)) {
            *g += scale * p;
        }
    }
    Ok((g_probs, g_sem))
}
