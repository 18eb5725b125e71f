//! Batch normalization over NCHW feature maps and (N, F) feature matrices.
//!
//! Training mode normalizes with biased batch statistics and updates the
//! running estimates; eval mode uses the running estimates, which makes
//! inference deterministic for identical inputs. Channels are independent,
//! so the per-channel work runs in parallel.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rayon::prelude::*;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

pub struct BatchNorm2d {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub grad_gamma: Array1<f64>,
    pub grad_beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    cache: Option<Bn2dCache>,
    /// When false, forward in training mode leaves running stats untouched
    /// (used by the gradient checker to keep the loss a pure function).
    pub track_running_stats: bool,
}

struct Bn2dCache {
    xhat: Array4<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            grad_gamma: Array1::zeros(channels),
            grad_beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            cache: None,
            track_running_stats: true,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (_, c, _, _) = x.dim();
        let n = (x.len() / c) as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::<f64>::zeros(c);

        let lanes: Vec<_> = xhat.axis_iter_mut(Axis(1)).collect();
        let stats: Vec<(f64, f64, f64)> = lanes
            .into_par_iter()
            .map(|mut lane| {
                let mean = lane.iter().sum::<f64>() / n;
                let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let is = 1.0 / (var + EPS).sqrt();
                lane.mapv_inplace(|v| (v - mean) * is);
                (mean, var, is)
            })
            .collect();
        for (ch, &(mean, var, is)) in stats.iter().enumerate() {
            inv_std[ch] = is;
            if self.track_running_stats {
                self.running_mean[ch] = (1.0 - MOMENTUM) * self.running_mean[ch] + MOMENTUM * mean;
                self.running_var[ch] = (1.0 - MOMENTUM) * self.running_var[ch] + MOMENTUM * var;
            }
        }

        let mut y = xhat.clone();
        let y_lanes: Vec<_> = y.axis_iter_mut(Axis(1)).collect();
        y_lanes.into_par_iter().enumerate().for_each(|(ch, mut lane)| {
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            lane.mapv_inplace(|v| g * v + b);
        });
        self.cache = Some(Bn2dCache { xhat, inv_std });
        y
    }

    pub fn infer(&self, x: ArrayView4<f64>) -> Array4<f64> {
        let mut y = x.to_owned();
        let lanes: Vec<_> = y.axis_iter_mut(Axis(1)).collect();
        lanes.into_par_iter().enumerate().for_each(|(ch, mut lane)| {
            let is = 1.0 / (self.running_var[ch] + EPS).sqrt();
            let (m, g, b) = (self.running_mean[ch], self.gamma[ch], self.beta[ch]);
            lane.mapv_inplace(|v| g * (v - m) * is + b);
        });
        y
    }

    pub fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("bn backward without forward");
        let (_, c, _, _) = grad_out.dim();
        let n = (grad_out.len() / c) as f64;
        let mut dx = Array4::<f64>::zeros(grad_out.raw_dim());

        let dx_lanes: Vec<_> = dx.axis_iter_mut(Axis(1)).collect();
        let grads: Vec<(f64, f64)> = dx_lanes
            .into_par_iter()
            .enumerate()
            .map(|(ch, mut dxc)| {
                let dy = grad_out.index_axis(Axis(1), ch);
                let xh = cache.xhat.index_axis(Axis(1), ch);
                let sum_dy = dy.iter().sum::<f64>();
                let sum_dy_xhat = dy.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
                let scale = self.gamma[ch] * cache.inv_std[ch] / n;
                for ((d, &g), &x) in dxc.iter_mut().zip(dy.iter()).zip(xh.iter()) {
                    *d = scale * (n * g - sum_dy - x * sum_dy_xhat);
                }
                (sum_dy_xhat, sum_dy)
            })
            .collect();
        for (ch, (dgamma, dbeta)) in grads.into_iter().enumerate() {
            self.grad_gamma[ch] += dgamma;
            self.grad_beta[ch] += dbeta;
        }
        dx
    }
}

pub struct BatchNorm1d {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub grad_gamma: Array1<f64>,
    pub grad_beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    cache: Option<Bn1dCache>,
    pub track_running_stats: bool,
}

struct Bn1dCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm1d {
    pub fn new(features: usize) -> Self {
        BatchNorm1d {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            grad_gamma: Array1::zeros(features),
            grad_beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            cache: None,
            track_running_stats: true,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let (n_rows, f) = x.dim();
        let n = n_rows as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::<f64>::zeros(f);
        for j in 0..f {
            let col = x.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[j] = is;
            xhat.column_mut(j).mapv_inplace(|v| (v - mean) * is);
            if self.track_running_stats {
                self.running_mean[j] = (1.0 - MOMENTUM) * self.running_mean[j] + MOMENTUM * mean;
                self.running_var[j] = (1.0 - MOMENTUM) * self.running_var[j] + MOMENTUM * var;
            }
        }
        let mut y = xhat.clone();
        for j in 0..f {
            let (g, b) = (self.gamma[j], self.beta[j]);
            y.column_mut(j).mapv_inplace(|v| g * v + b);
        }
        self.cache = Some(Bn1dCache { xhat, inv_std });
        y
    }

    pub fn infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (_, f) = x.dim();
        let mut y = x.to_owned();
        for j in 0..f {
            let is = 1.0 / (self.running_var[j] + EPS).sqrt();
            let (m, g, b) = (self.running_mean[j], self.gamma[j], self.beta[j]);
            y.column_mut(j).mapv_inplace(|v| g * (v - m) * is + b);
        }
        y
    }

    pub fn backward(&mut self, grad_out: &Array2<f64>) -> Array2<f64> {
        let cache = self.cache.take().expect("bn backward without forward");
        let (n_rows, f) = grad_out.dim();
        let n = n_rows as f64;
        let mut dx = Array2::<f64>::zeros(grad_out.raw_dim());
        for j in 0..f {
            let dy = grad_out.column(j);
            let xh = cache.xhat.column(j);
            let sum_dy = dy.sum();
            let sum_dy_xhat = dy.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
            self.grad_beta[j] += sum_dy;
            self.grad_gamma[j] += sum_dy_xhat;
            let scale = self.gamma[j] * cache.inv_std[j] / n;
            for ((d, &g), &x) in dx.column_mut(j).iter_mut().zip(dy.iter()).zip(xh.iter()) {
                *d = scale * (n * g - sum_dy - x * sum_dy_xhat);
            }
        }
        dx
    }

    pub fn num_features(&self) -> usize {
        self.gamma.len()
    }
}
