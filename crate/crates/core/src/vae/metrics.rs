//! Reconstruction quality metrics.

use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use super::loss::kld;
use super::model::ConvVae;
use super::ssim::ssim;
use crate::error::{LnmError, Result};

/// PSNR reported for a perfect reconstruction, keeping aggregates finite.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub ssim: f64,
    pub psnr: f64,
    pub mse: f64,
    pub mae: f64,
    /// Mean KLD of the encoded posteriors, logged alongside the image metrics.
    pub kld: f64,
    pub n_images: usize,
}

/// Metrics of mu-path reconstructions averaged over a split.
pub fn reconstruction_report(model: &ConvVae, images: &Array4<f64>) -> Result<ReconstructionReport> {
    let n = images.dim().0;
    if n == 0 {
        return Err(LnmError::Validation("reconstruction report requires a nonempty split".into()));
    }
    let mut totals = MetricTotals::default();
    let chunk = model.config.batch_size.max(1);
    let mut kld_total = 0.0;
    for start in (0..n).step_by(chunk) {
        let end = (start + chunk).min(n);
        let x = images.slice(s![start..end, .., .., ..]).to_owned();
        let (mu, logvar) = model.encode_batch(&x)?;
        let xhat = model.decode_batch(&mu)?;
        kld_total += kld(&mu, &logvar) * (end - start) as f64;
        totals.add_batch(&x, &xhat);
    }
    let mut report = totals.finish(n);
    report.kld = kld_total / n as f64;
    Ok(report)
}

/// Metrics between two aligned image stacks (identity pipeline for testing).
pub fn image_metrics(x: &Array4<f64>, xhat: &Array4<f64>) -> Result<ReconstructionReport> {
    let n = x.dim().0;
    if n == 0 {
        return Err(LnmError::Validation("metrics require a nonempty split".into()));
    }
    if x.dim() != xhat.dim() {
        return Err(LnmError::Validation("image stacks must have equal shape".into()));
    }
    let mut totals = MetricTotals::default();
    totals.add_batch(x, xhat);
    Ok(totals.finish(n))
}

#[derive(Default)]
struct MetricTotals {
    ssim: f64,
    psnr: f64,
    mse: f64,
    mae: f64,
}

impl MetricTotals {
    fn add_batch(&mut self, x: &Array4<f64>, xhat: &Array4<f64>) {
        for b in 0..x.dim().0 {
            let xi = x.slice(s![b, 0, .., ..]).to_owned();
            let yi = xhat.slice(s![b, 0, .., ..]).to_owned();
            let n_px = xi.len() as f64;
            let mse = xi.iter().zip(yi.iter()).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() / n_px;
            let mae = xi.iter().zip(yi.iter()).map(|(a, c)| (a - c).abs()).sum::<f64>() / n_px;
            self.mse += mse;
            self.mae += mae;
            self.ssim += ssim(&xi, &yi);
            // PSNR against peak value 1.0, capped for exact reconstructions.
            self.psnr += if mse > 0.0 {
                (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
            } else {
                PSNR_CAP_DB
            };
        }
    }

    fn finish(self, n: usize) -> ReconstructionReport {
        let nf = n as f64;
        ReconstructionReport {
            ssim: self.ssim / nf,
            psnr: self.psnr / nf,
            mse: self.mse / nf,
            mae: self.mae / nf,
            kld: 0.0,
            n_images: n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::component_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng as _;

    #[test]
    fn perfect_reconstruction_metrics() {
        let mut rng = component_rng(1, "metrics-perfect");
        let x = Array4::from_shape_simple_fn((3, 1, 32, 32), || rng.random::<f64>());
        let report = image_metrics(&x, &x.clone()).unwrap();
        assert_abs_diff_eq!(report.ssim, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.mse, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(report.mae, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(report.psnr, PSNR_CAP_DB, epsilon = 1e-12);
    }

    #[test]
    fn constant_offset_metrics() {
        let mut rng = component_rng(2, "metrics-offset");
        // keep x in [0, 0.9] so the +0.1 offset needs no clipping
        let x = Array4::from_shape_simple_fn((2, 1, 32, 32), || rng.random::<f64>() * 0.9);
        let xhat = x.mapv(|v| v + 0.1);
        let report = image_metrics(&x, &xhat).unwrap();
        assert_abs_diff_eq!(report.mae, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(report.mse, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(report.psnr, 20.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_split_rejected() {
        let x = Array4::<f64>::zeros((0, 1, 32, 32));
        assert!(matches!(image_metrics(&x, &x.clone()), Err(LnmError::Validation(_))));
    }
}
