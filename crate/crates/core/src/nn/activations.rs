//! Elementwise activations with analytic gradients.

use ndarray::{ArrayD, ArrayViewD};
use rayon::prelude::*;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const PAR_CHUNK: usize = 16 * 1024;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parallel in-place map over a contiguous array; chunk boundaries are fixed
/// so the result does not depend on the thread count.
fn par_apply<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>, f: impl Fn(f64) -> f64 + Sync) {
    let slice = a.as_slice_mut().expect("contiguous tensor");
    slice.par_chunks_mut(PAR_CHUNK).for_each(|chunk| {
        for v in chunk {
            *v = f(*v);
        }
    });
}

/// Parallel elementwise product-update: `dst[i] = f(src[i]) * dst[i]`.
fn par_scale_by<D: ndarray::Dimension>(
    dst: &mut ndarray::Array<f64, D>,
    src: &ArrayD<f64>,
    f: impl Fn(f64) -> f64 + Sync,
) {
    let d = dst.as_slice_mut().expect("contiguous tensor");
    let s = src.as_slice().expect("contiguous tensor");
    d.par_chunks_mut(PAR_CHUNK)
        .zip(s.par_chunks(PAR_CHUNK))
        .for_each(|(dc, sc)| {
            for (dv, &sv) in dc.iter_mut().zip(sc.iter()) {
                *dv *= f(sv);
            }
        });
}

/// GELU layer (tanh form) over any tensor shape.
pub struct Gelu {
    cache: Option<ArrayD<f64>>,
}

impl Gelu {
    pub fn new() -> Self {
        Gelu { cache: None }
    }

    pub fn forward<D: ndarray::Dimension>(&mut self, x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
        self.cache = Some(x.clone().into_dyn());
        let mut y = x.clone();
        par_apply(&mut y, gelu_scalar);
        y
    }

    pub fn infer(x: ArrayViewD<f64>) -> ArrayD<f64> {
        let mut y = x.to_owned();
        par_apply(&mut y, gelu_scalar);
        y
    }

    pub fn backward<D: ndarray::Dimension>(&mut self, grad_out: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
        let x = self.cache.take().expect("gelu backward without forward");
        let mut dx = grad_out.clone();
        par_scale_by(&mut dx, &x, gelu_grad_scalar);
        dx
    }
}

impl Default for Gelu {
    fn default() -> Self {
        Self::new()
    }
}

/// Sigmoid layer; caches the output, whose value alone determines the gradient.
pub struct Sigmoid {
    cache: Option<ArrayD<f64>>,
}

impl Sigmoid {
    pub fn new() -> Self {
        Sigmoid { cache: None }
    }

    pub fn forward<D: ndarray::Dimension>(&mut self, x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
        let mut y = x.clone();
        par_apply(&mut y, sigmoid_scalar);
        self.cache = Some(y.clone().into_dyn());
        y
    }

    pub fn infer(x: ArrayViewD<f64>) -> ArrayD<f64> {
        let mut y = x.to_owned();
        par_apply(&mut y, sigmoid_scalar);
        y
    }

    pub fn backward<D: ndarray::Dimension>(&mut self, grad_out: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
        let y = self.cache.take().expect("sigmoid backward without forward");
        let mut dx = grad_out.clone();
        par_scale_by(&mut dx, &y, |v| v * (1.0 - v));
        dx
    }
}

impl Default for Sigmoid {
    fn default() -> Self {
        Self::new()
    }
}
