use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Invalid(format!(
                "adam betas must lie in (0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Invalid(format!("adam eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First and second moments for one parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    /// Updates rejected because of a non-finite gradient.
    pub skipped: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            skipped: 0,
        }
    }
}

/// One bias-corrected Adam update. Returns `Ok(false)` and leaves everything
/// but the skip counter untouched when `grads` holds a NaN or infinity.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<bool> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {}/{} moments",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        state.skipped += 1;
        log::warn!("non-finite gradient, skipping update ({} skipped so far)", state.skipped);
        return Ok(false);
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3, -1.2, 4.0];
        let before = p.clone();
        let mut s = OptimizerState::new(3);
        for _ in 0..50 {
            adam_step(&mut p, &[0.0; 3], &mut s, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut s = OptimizerState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1, &AdamConfig::default()).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_skipped() {
        let mut p = vec![1.0, 2.0];
        let mut s = OptimizerState::new(2);
        let applied = adam_step(&mut p, &[f64::NAN, 1.0], &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert!(!applied);
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!((s.step, s.skipped), (0, 1));
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.5, -0.5];
            let mut s = OptimizerState::new(2);
            for k in 0..10 {
                let g = [k as f64 * 0.1, -0.2];
                adam_step(&mut p, &g, &mut s, 0.01, &AdamConfig::default()).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_betas() {
        let c = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
