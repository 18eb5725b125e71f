//! Inverted dropout.

use ndarray::ArrayD;
use rand::Rng as _;

use crate::rng::Rng;

pub struct Dropout {
    pub p: f64,
    mask: Option<ArrayD<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0,1)");
        Dropout { p, mask: None }
    }

    /// Training-mode forward; draws the keep mask from `rng`.
    pub fn forward<D: ndarray::Dimension>(
        &mut self,
        x: &ndarray::Array<f64, D>,
        rng: &mut Rng,
    ) -> ndarray::Array<f64, D> {
        if self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let mask = ndarray::Array::from_shape_simple_fn(x.raw_dim(), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let y = x * &mask;
        self.mask = Some(mask.into_dyn());
        y
    }

    pub fn backward<D: ndarray::Dimension>(&mut self, grad_out: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
        match self.mask.take() {
            None => grad_out.clone(),
            Some(mask) => {
                let mut dx = grad_out.clone();
                for (d, &m) in dx.iter_mut().zip(mask.iter()) {
                    *d *= m;
                }
                dx
            }
        }
    }
}
