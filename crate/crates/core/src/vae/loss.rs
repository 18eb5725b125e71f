//! Composite reconstruction/regularization loss and the KLD annealing schedule.

use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use super::ssim::{ssim, ssim_with_grad};
use crate::error::{LnmError, Result};

/// Weights of the composite loss
/// `alpha*lambda*L1 + (1-alpha)*gamma*(1-SSIM) + a(t)*beta*KLD`.
///
/// SSIM rewards good reconstructions, so the loss uses the dissimilarity
/// `1 - SSIM`; minimizing the raw score would push reconstructions away from
/// the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub beta: f64,
    pub annealing: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::reference_defaults(64)
    }
}

impl LossWeights {
    /// The published optimum: alpha 0.5, lambda 4000, gamma 3 * batch size,
    /// annealing on.
    pub fn reference_defaults(batch_size: usize) -> Self {
        LossWeights { alpha: 0.5, lambda: 4000.0, gamma: 3.0 * batch_size as f64, beta: 1.0, annealing: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LnmError::Config(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        for (name, v) in [("lambda", self.lambda), ("gamma", self.gamma), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(LnmError::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Exponential KLD annealing `a(t) = exp(rate * (t/T - 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub total_epochs: usize,
    pub rate: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule { total_epochs: 200, rate: 5.0 }
    }
}

/// Annealing factor at epoch `t`; nondecreasing, `a(T) = 1`, and epochs past
/// the schedule clamp to 1. With annealing disabled the factor is 1 always.
pub fn anneal(t: usize, schedule: &AnnealSchedule, enabled: bool) -> f64 {
    if !enabled || schedule.total_epochs == 0 {
        return 1.0;
    }
    let frac = (t.min(schedule.total_epochs) as f64) / schedule.total_epochs as f64;
    (schedule.rate * (frac - 1.0)).exp()
}

/// `0.5 * sum_d (mu^2 + exp(logvar) - 1 - logvar)` per row, averaged over rows.
pub fn kld(mu: &Array2<f64>, logvar: &Array2<f64>) -> f64 {
    assert_eq!(mu.dim(), logvar.dim(), "kld inputs must have equal shape");
    let batch = mu.dim().0 as f64;
    let total: f64 = mu
        .iter()
        .zip(logvar.iter())
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum();
    0.5 * total / batch
}

/// Gradient of the batch-mean KLD with respect to mu and logvar.
pub fn kld_grad(mu: &Array2<f64>, logvar: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let batch = mu.dim().0 as f64;
    let dmu = mu.mapv(|m| m / batch);
    let dlogvar = logvar.mapv(|lv| 0.5 * (lv.exp() - 1.0) / batch);
    (dmu, dlogvar)
}

/// Mean absolute error over the whole batch (per-image mean, batch mean).
pub fn l1(x: &Array4<f64>, y: &Array4<f64>) -> f64 {
    assert_eq!(x.dim(), y.dim());
    x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64
}

/// Gradient of [`l1`] with respect to `y`; zero where the difference is zero.
pub fn l1_grad(x: &Array4<f64>, y: &Array4<f64>) -> Array4<f64> {
    let n = x.len() as f64;
    let mut g = Array4::zeros(x.raw_dim());
    for ((gv, &a), &b) in g.iter_mut().zip(x.iter()).zip(y.iter()) {
        *gv = (b - a).signum() / n;
        if a == b {
            *gv = 0.0;
        }
    }
    g
}

/// Mean SSIM over a batch of single-channel images.
pub fn batch_ssim(x: &Array4<f64>, y: &Array4<f64>) -> f64 {
    let batch = x.dim().0;
    let mut total = 0.0;
    for b in 0..batch {
        let xb = x.slice(s![b, 0, .., ..]).to_owned();
        let yb = y.slice(s![b, 0, .., ..]).to_owned();
        total += ssim(&xb, &yb);
    }
    total / batch as f64
}

/// Loss components, reported separately for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub l1: f64,
    pub ssim: f64,
    pub kld: f64,
    pub anneal_factor: f64,
}

impl LossComponents {
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (name, v) in [("total", self.total), ("l1", self.l1), ("ssim", self.ssim), ("kld", self.kld)] {
            if !v.is_finite() {
                return Err(LnmError::Numerical(format!("loss diverged at {context}: component {name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Composite loss value for a batch.
pub fn vae_loss(
    x: &Array4<f64>,
    xhat: &Array4<f64>,
    mu: &Array2<f64>,
    logvar: &Array2<f64>,
    weights: &LossWeights,
    anneal_factor: f64,
) -> LossComponents {
    let l1_term = l1(x, xhat);
    let ssim_term = batch_ssim(x, xhat);
    let kld_term = kld(mu, logvar);
    let total = weights.alpha * weights.lambda * l1_term
        + (1.0 - weights.alpha) * weights.gamma * (1.0 - ssim_term)
        + anneal_factor * weights.beta * kld_term;
    LossComponents { total, l1: l1_term, ssim: ssim_term, kld: kld_term, anneal_factor }
}

/// Composite loss plus gradients with respect to the reconstruction, mu and
/// logvar.
pub fn vae_loss_with_grad(
    x: &Array4<f64>,
    xhat: &Array4<f64>,
    mu: &Array2<f64>,
    logvar: &Array2<f64>,
    weights: &LossWeights,
    anneal_factor: f64,
) -> (LossComponents, Array4<f64>, Array2<f64>, Array2<f64>) {
    let batch = x.dim().0;
    let l1_term = l1(x, xhat);
    let mut dxhat = l1_grad(x, xhat);
    dxhat.mapv_inplace(|v| v * weights.alpha * weights.lambda);

    // SSIM enters as (1 - ssim): flip the sign of its gradient.
    let mut ssim_total = 0.0;
    let ssim_scale = -(1.0 - weights.alpha) * weights.gamma / batch as f64;
    for b in 0..batch {
        let xb = x.slice(s![b, 0, .., ..]).to_owned();
        let yb = xhat.slice(s![b, 0, .., ..]).to_owned();
        let (s_val, s_grad) = ssim_with_grad(&xb, &yb);
        ssim_total += s_val;
        let mut target = dxhat.slice_mut(s![b, 0, .., ..]);
        target.scaled_add(ssim_scale, &s_grad);
    }
    let ssim_term = ssim_total / batch as f64;

    let kld_term = kld(mu, logvar);
    let (mut dmu, mut dlogvar) = kld_grad(mu, logvar);
    let kld_scale = anneal_factor * weights.beta;
    dmu.mapv_inplace(|v| v * kld_scale);
    dlogvar.mapv_inplace(|v| v * kld_scale);

    let total = weights.alpha * weights.lambda * l1_term
        + (1.0 - weights.alpha) * weights.gamma * (1.0 - ssim_term)
        + kld_scale * kld_term;
    (
        LossComponents { total, l1: l1_term, ssim: ssim_term, kld: kld_term, anneal_factor },
        dxhat,
        dmu,
        dlogvar,
    )
}
