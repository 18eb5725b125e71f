//! Bilinear 2x upsampling (half-pixel alignment, clamped borders).

use ndarray::{Array4, ArrayView4, Axis};
use rayon::prelude::*;

/// Per-output-coordinate source taps: `(lo, hi, w_lo, w_hi)`.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..out_len)
        .map(|i| {
            let src = (i as f64 + 0.5) / 2.0 - 0.5;
            if src <= 0.0 {
                (0, 0, 1.0, 0.0)
            } else if src >= (in_len - 1) as f64 {
                (in_len - 1, in_len - 1, 1.0, 0.0)
            } else {
                let lo = src.floor() as usize;
                let frac = src - lo as f64;
                (lo, lo + 1, 1.0 - frac, frac)
            }
        })
        .collect()
}

pub struct Upsample2x {
    cached_in_dim: Option<(usize, usize, usize, usize)>,
}

impl Upsample2x {
    pub fn new() -> Self {
        Upsample2x { cached_in_dim: None }
    }

    fn forward_impl(x: ArrayView4<f64>) -> Array4<f64> {
        let (batch, c, h, w) = x.dim();
        let (ho, wo) = (h * 2, w * 2);
        let row_taps = taps(ho, h);
        let col_taps = taps(wo, w);
        let mut y = Array4::<f64>::zeros((batch, c, ho, wo));
        let mut y_flat = y
            .view_mut()
            .into_shape_with_order((batch * c, ho, wo))
            .expect("contiguous output");
        let planes: Vec<_> = y_flat.axis_iter_mut(Axis(0)).collect();
        let xs = x.into_shape_with_order((batch * c, h, w)).expect("contiguous input");
        planes.into_par_iter().enumerate().for_each(|(p, mut plane)| {
            let src = xs.index_axis(Axis(0), p);
            let src_slice = src.to_slice().expect("contiguous input plane");
            let dst_slice = plane.as_slice_mut().expect("contiguous output plane");
            for (i, &(r0, r1, wr0, wr1)) in row_taps.iter().enumerate() {
                let row0 = &src_slice[r0 * w..][..w];
                let row1 = &src_slice[r1 * w..][..w];
                let dst = &mut dst_slice[i * wo..][..wo];
                for (j, &(c0, c1, wc0, wc1)) in col_taps.iter().enumerate() {
                    dst[j] = wr0 * (wc0 * row0[c0] + wc1 * row0[c1])
                        + wr1 * (wc0 * row1[c0] + wc1 * row1[c1]);
                }
            }
        });
        y
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        self.cached_in_dim = Some(x.dim());
        Self::forward_impl(x.view())
    }

    pub fn infer(x: ArrayView4<f64>) -> Array4<f64> {
        Self::forward_impl(x)
    }

    pub fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let (batch, c, h, w) = self.cached_in_dim.take().expect("upsample backward without forward");
        let (_, _, ho, wo) = grad_out.dim();
        let row_taps = taps(ho, h);
        let col_taps = taps(wo, w);
        let mut dx = Array4::<f64>::zeros((batch, c, h, w));
        let mut dx_flat = dx
            .view_mut()
            .into_shape_with_order((batch * c, h, w))
            .expect("contiguous input grad");
        let planes: Vec<_> = dx_flat.axis_iter_mut(Axis(0)).collect();
        let gs = grad_out
            .view()
            .into_shape_with_order((batch * c, ho, wo))
            .expect("contiguous output grad");
        planes.into_par_iter().enumerate().for_each(|(p, mut plane)| {
            let g = gs.index_axis(Axis(0), p);
            for (i, &(r0, r1, wr0, wr1)) in row_taps.iter().enumerate() {
                for (j, &(c0, c1, wc0, wc1)) in col_taps.iter().enumerate() {
                    let gv = g[[i, j]];
                    plane[[r0, c0]] += wr0 * wc0 * gv;
                    plane[[r0, c1]] += wr0 * wc1 * gv;
                    plane[[r1, c0]] += wr1 * wc0 * gv;
                    plane[[r1, c1]] += wr1 * wc1 * gv;
                }
            }
        });
        dx
    }
}

impl Default for Upsample2x {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn doubles_spatial_dims_and_interpolates() {
        let x = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, i, j)| (i * 2 + j) as f64);
        let y = Upsample2x::infer(x.view());
        assert_eq!(y.dim(), (1, 1, 4, 4));
        // corners replicate, centre interpolates
        assert_abs_diff_eq!(y[[0, 0, 0, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[[0, 0, 3, 3]], 3.0, epsilon = 1e-12);
        // src 0.25 on both axes: 0.75*(0.75*0 + 0.25*1) + 0.25*(0.75*2 + 0.25*3)
        assert_abs_diff_eq!(y[[0, 0, 1, 1]], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn one_by_one_replicates() {
        let x = Array4::from_elem((1, 2, 1, 1), 3.5);
        let y = Upsample2x::infer(x.view());
        assert!(y.iter().all(|&v| (v - 3.5).abs() < 1e-15));
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <Ax, y> == <x, A^T y> on random-ish data
        let x = Array4::from_shape_fn((1, 1, 3, 3), |(_, _, i, j)| (i as f64 - j as f64) * 0.3 + 0.1);
        let mut up = Upsample2x::new();
        let ax = up.forward(&x);
        let y = Array4::from_shape_fn(ax.dim(), |(_, _, i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let aty = up.backward(&y);
        let lhs: f64 = ax.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(aty.iter()).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
    }
}
