//! Fully connected layer.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::gemm::matmul;
use super::init::uniform_fan_in;
use crate::rng::Rng;

pub struct Linear {
    pub weight: Array2<f64>, // (out, in)
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    cached_input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: uniform_fan_in((out_features, in_features), in_features, rng),
            bias: Array1::zeros(out_features),
            grad_weight: Array2::zeros((out_features, in_features)),
            grad_bias: Array1::zeros(out_features),
            cached_input: None,
        }
    }

    fn forward_impl(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = matmul(x, self.weight.t());
        for mut row in y.rows_mut() {
            row += &self.bias;
        }
        y
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.forward_impl(x.view());
        self.cached_input = Some(x.clone());
        y
    }

    pub fn infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_impl(x)
    }

    pub fn backward(&mut self, grad_out: &Array2<f64>) -> Array2<f64> {
        let x = self.cached_input.take().expect("linear backward without forward");
        self.grad_weight.scaled_add(1.0, &matmul(grad_out.t(), x.view()));
        self.grad_bias.scaled_add(1.0, &grad_out.sum_axis(Axis(0)));
        matmul(grad_out.view(), self.weight.view())
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim().0
    }
}
