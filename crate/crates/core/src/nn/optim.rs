//! Adam with decoupled weight decay.

use ndarray::{ArrayD, ArrayViewMutD};

/// Mutable view over one parameter tensor and its gradient buffer.
pub struct ParamRef<'a> {
    pub value: ArrayViewMutD<'a, f64>,
    pub grad: ArrayViewMutD<'a, f64>,
    /// Weight decay is skipped for biases and normalization parameters.
    pub decay: bool,
}

impl<'a> ParamRef<'a> {
    pub fn new<D: ndarray::Dimension>(
        value: &'a mut ndarray::Array<f64, D>,
        grad: &'a mut ndarray::Array<f64, D>,
        decay: bool,
    ) -> Self {
        ParamRef {
            value: value.view_mut().into_dyn(),
            grad: grad.view_mut().into_dyn(),
            decay,
        }
    }
}

pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update. `params` must be passed in the same order on
    /// every call; the moment buffers are keyed by position.
    pub fn step(&mut self, params: &mut [ParamRef<'_>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        }
        assert_eq!(self.m.len(), params.len(), "parameter count changed between steps");
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (idx, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            for (((w, g), mi), vi) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.learning_rate * (mhat / (vhat.sqrt() + self.eps) + decay * *w);
            }
        }
    }
}

/// Zero every gradient buffer.
pub fn zero_grads(params: &mut [ParamRef<'_>]) {
    for p in params.iter_mut() {
        p.grad.fill(0.0);
    }
}

/// Scale every gradient buffer, used for gradient accumulation.
pub fn scale_grads(params: &mut [ParamRef<'_>], factor: f64) {
    for p in params.iter_mut() {
        p.grad.mapv_inplace(|g| g * factor);
    }
}
