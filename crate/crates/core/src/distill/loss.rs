//! Per-mask losses and their gradients with respect to mask probabilities.

use crate::math;
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;
const DICE_SMOOTH: f64 = 1.0;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels but target has {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Shape("empty mask".into()));
    }
    Ok(())
}

/// Positive- and negative-class focal terms at probability `p`, with their
/// derivatives. Derivatives vanish where the clamp is active.
#[inline]
pub(crate) fn focal_terms(p: f64, gamma: f64, alpha: f64) -> (f64, f64, f64, f64) {
    let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&p);
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let q = 1.0 - p;
    let (lp, lq) = (p.ln(), q.ln());
    let pos = -alpha * q.powf(gamma) * lp;
    let neg = -(1.0 - alpha) * p.powf(gamma) * lq;
    if clamped {
        return (pos, neg, 0.0, 0.0);
    }
    let (dq_gamma, dp_gamma) = if gamma == 0.0 {
        (0.0, 0.0)
    } else {
        (gamma * q.powf(gamma - 1.0), gamma * p.powf(gamma - 1.0))
    };
    let d_pos = alpha * (dq_gamma * lp - q.powf(gamma) / p);
    let d_neg = -(1.0 - alpha) * (dp_gamma * lq - p.powf(gamma) / q);
    (pos, neg, d_pos, d_neg)
}

/// Mean sigmoid focal loss. Soft targets mix the positive and negative
/// terms linearly, which reduces to the usual definition for binary targets.
pub fn focal_loss(pred: &[f64], target: &[f64], gamma: f64, alpha: f64) -> Result<f64> {
    same_len(pred, target)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let (pos, neg, _, _) = focal_terms(p, gamma, alpha);
            t * pos + (1.0 - t) * neg
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`focal_loss`] with respect to `pred`.
pub fn focal_loss_grad(pred: &[f64], target: &[f64], gamma: f64, alpha: f64) -> Result<Vec<f64>> {
    same_len(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let (_, _, dp, dn) = focal_terms(p, gamma, alpha);
            (t * dp + (1.0 - t) * dn) / n
        })
        .collect())
}

/// Soft dice loss `1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1)`.
pub fn dice_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred, target)?;
    let (inter, sp, st) = dice_sums(pred, target);
    Ok(1.0 - (2.0 * inter + DICE_SMOOTH) / (sp + st + DICE_SMOOTH))
}

pub(crate) fn dice_sums(pred: &[f64], target: &[f64]) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut st = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        inter += p * t;
        sp += p;
        st += t;
    }
    (inter, sp, st)
}

pub(crate) fn dice_from_sums(inter: f64, sp: f64, st: f64) -> f64 {
    1.0 - (2.0 * inter + DICE_SMOOTH) / (sp + st + DICE_SMOOTH)
}

pub fn dice_loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    same_len(pred, target)?;
    let (inter, sp, st) = dice_sums(pred, target);
    let den = sp + st + DICE_SMOOTH;
    let num = 2.0 * inter + DICE_SMOOTH;
    Ok(target.iter().map(|&t| -(2.0 * t * den - num) / (den * den)).collect())
}

/// `1 - cos(pred, target)`; a zero prediction scores 1.
pub fn cosine_loss(pred: &[f64], target: &[f64]) -> f64 {
    match math::cosine(pred, target) {
        Some(c) => 1.0 - c,
        None => 1.0,
    }
}

pub fn cosine_loss_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let np = math::norm(pred);
    let nt = math::norm(target);
    if np == 0.0 || nt == 0.0 {
        return vec![0.0; pred.len()];
    }
    let c = math::dot(pred, target) / (np * nt);
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| -(t / (np * nt) - c * p / (np * np)))
        .collect()
}

/// Sum over the listed masks of the mean squared probability.
pub fn extra_loss(probs: &[f64], pixels: usize, unmatched: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in unmatched {
        let m = probs
            .get(i * pixels..(i + 1) * pixels)
            .ok_or_else(|| Error::Invalid(format!("mask index {i} out of range")))?;
        total += m.iter().map(|p| p * p).sum::<f64>() / pixels as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_perfect_prediction() {
        let t = [1.0, 0.0, 1.0, 0.0];
        assert!(focal_loss(&t, &t, 2.0, 0.25).unwrap() < 1e-5);
    }

    #[test]
    fn focal_gamma_zero_is_half_bce() {
        let l = focal_loss(&[0.5], &[1.0], 0.0, 0.5).unwrap();
        assert!((l - 0.5 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 0.34657).abs() < 1e-5);
    }

    #[test]
    fn focal_single_pixel_value() {
        let l = focal_loss(&[0.9], &[1.0], 2.0, 0.25).unwrap();
        let expected = 0.25 * 0.01 * -(0.9f64.ln());
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 2.634e-4).abs() < 1e-7);
    }

    #[test]
    fn dice_values() {
        let mut t = vec![0.0; 2000];
        t[..1000].iter_mut().for_each(|v| *v = 1.0);
        assert!(dice_loss(&t, &t).unwrap() < 1e-3);
        let p: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
        assert!(dice_loss(&p, &t).unwrap() > 0.998);
        let mut t4 = vec![0.0; 10];
        let mut p4 = vec![0.0; 10];
        for k in 0..4 {
            t4[k] = 1.0;
            p4[k] = 0.5;
        }
        assert!((dice_loss(&p4, &t4).unwrap() - 2.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_identities() {
        let a = [0.6, 0.8, 0.0];
        assert!(cosine_loss(&a, &a).abs() < 1e-15);
        assert!((cosine_loss(&[0.0, 0.0, 2.0], &a) - 1.0).abs() < 1e-15);
        assert!((cosine_loss(&[-0.6, -0.8, 0.0], &a) - 2.0).abs() < 1e-15);
        assert_eq!(cosine_loss(&[0.0; 3], &a), 1.0);
    }

    #[test]
    fn extra_loss_examples() {
        let probs = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(extra_loss(&probs, 4, &[]).unwrap(), 0.0);
        assert_eq!(extra_loss(&probs, 4, &[0]).unwrap(), 0.0);
        assert_eq!(extra_loss(&probs, 4, &[1]).unwrap(), 1.0);
        assert!(extra_loss(&probs, 4, &[2]).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(focal_loss(&[0.5], &[1.0, 0.0], 2.0, 0.25).is_err());
        assert!(dice_loss(&[0.5, 0.1], &[1.0]).is_err());
    }

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let eps = 1e-6;
        (0..x.len())
            .map(|k| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[k] += eps;
                b[k] -= eps;
                (f(&a) - f(&b)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = [0.2, 0.7, 0.45, 0.93, 0.05];
        let t = [1.0, 0.0, 1.0, 1.0, 0.3];
        let checks: Vec<(Vec<f64>, Vec<f64>)> = vec![
            (focal_loss_grad(&p, &t, 2.0, 0.25).unwrap(), fd(|x| focal_loss(x, &t, 2.0, 0.25).unwrap(), &p)),
            (focal_loss_grad(&p, &t, 0.0, 0.6).unwrap(), fd(|x| focal_loss(x, &t, 0.0, 0.6).unwrap(), &p)),
            (dice_loss_grad(&p, &t).unwrap(), fd(|x| dice_loss(x, &t).unwrap(), &p)),
            (cosine_loss_grad(&p, &t), fd(|x| cosine_loss(x, &t), &p)),
        ];
        for (a, n) in checks {
            for (x, y) in a.iter().zip(&n) {
                assert!((x - y).abs() < 1e-7, "{a:?} vs {n:?}");
            }
        }
    }
}
