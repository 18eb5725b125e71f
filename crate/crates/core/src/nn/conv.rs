//! 2D convolution via im2col + GEMM.
//!
//! The lowering and its adjoint move data with contiguous row segments
//! wherever the stride allows, and the forward pass caches the column matrix
//! for reuse in backward.

use ndarray::{s, Array1, Array2, Array4, ArrayView4, Axis};
use rayon::prelude::*;

use super::gemm::matmul;
use super::init::kaiming_normal;
use crate::rng::Rng;

/// Convolution layer, NCHW layout, square kernel, zero padding.
///
/// `pad = k / 2`, so stride 1 preserves the spatial size for odd kernels and
/// stride 2 halves an even input size.
pub struct Conv2d {
    pub weight: Array4<f64>, // (c_out, c_in, k, k)
    pub bias: Array1<f64>,
    pub grad_weight: Array4<f64>,
    pub grad_bias: Array1<f64>,
    pub stride: usize,
    pub pad: usize,
    cached_col: Option<Array2<f64>>,
    cached_in_dim: Option<(usize, usize, usize, usize)>,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut Rng) -> Self {
        let fan_in = c_in * k * k;
        Conv2d {
            weight: kaiming_normal((c_out, c_in, k, k), fan_in, rng),
            bias: Array1::zeros(c_out),
            grad_weight: Array4::zeros((c_out, c_in, k, k)),
            grad_bias: Array1::zeros(c_out),
            stride,
            pad: k / 2,
            cached_col: None,
            cached_in_dim: None,
        }
    }

    pub fn out_spatial(&self, h: usize) -> usize {
        let k = self.weight.dim().2;
        (h + 2 * self.pad - k) / self.stride + 1
    }

    fn forward_with_col(&self, x: ArrayView4<f64>) -> (Array4<f64>, Array2<f64>) {
        let (batch, c_in, h, w) = x.dim();
        let (c_out, c_in_w, k, _) = self.weight.dim();
        assert_eq!(c_in, c_in_w, "conv input channels mismatch");
        let (ho, wo) = (self.out_spatial(h), self.out_spatial(w));

        let col = im2col(x, k, self.stride, self.pad, ho, wo);
        let w2d = self
            .weight
            .view()
            .into_shape_with_order((c_out, c_in * k * k))
            .expect("contiguous weight");
        let y2d = matmul(w2d, col.view()); // (c_out, batch*ho*wo)

        let mut y = Array4::<f64>::zeros((batch, c_out, ho, wo));
        {
            let plane = ho * wo;
            let y2d_slice = y2d.as_slice().expect("contiguous gemm output");
            let y_slice = y.as_slice_mut().expect("contiguous output");
            for b in 0..batch {
                for c in 0..c_out {
                    let src = &y2d_slice[c * batch * plane + b * plane..][..plane];
                    let dst = &mut y_slice[(b * c_out + c) * plane..][..plane];
                    let bias = self.bias[c];
                    for (d, &v) in dst.iter_mut().zip(src.iter()) {
                        *d = v + bias;
                    }
                }
            }
        }
        (y, col)
    }

    /// Forward pass that caches the lowered input for `backward`.
    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (y, col) = self.forward_with_col(x.view());
        self.cached_col = Some(col);
        self.cached_in_dim = Some(x.dim());
        y
    }

    /// Pure forward pass for inference; no caches are written.
    pub fn infer(&self, x: ArrayView4<f64>) -> Array4<f64> {
        self.forward_with_col(x.view()).0
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let col = self.cached_col.take().expect("conv backward without forward");
        let (batch, c_in, h, w) = self.cached_in_dim.take().expect("conv backward without forward");
        let (c_out, _, k, _) = self.weight.dim();
        let (_, _, ho, wo) = grad_out.dim();
        let plane = ho * wo;

        // (c_out, batch*ho*wo) with the same column order as im2col.
        let mut dy2d = Array2::<f64>::zeros((c_out, batch * plane));
        {
            let g_slice = grad_out.as_slice().expect("contiguous grad");
            let d_slice = dy2d.as_slice_mut().expect("contiguous grad matrix");
            for b in 0..batch {
                for c in 0..c_out {
                    let src = &g_slice[(b * c_out + c) * plane..][..plane];
                    let dst = &mut d_slice[c * batch * plane + b * plane..][..plane];
                    dst.copy_from_slice(src);
                }
            }
        }

        let dw2d = matmul(dy2d.view(), col.t());
        self.grad_weight
            .view_mut()
            .into_shape_with_order((c_out, c_in * k * k))
            .expect("contiguous grad weight")
            .scaled_add(1.0, &dw2d);
        self.grad_bias.scaled_add(1.0, &dy2d.sum_axis(Axis(1)));

        let w2d = self
            .weight
            .view()
            .into_shape_with_order((c_out, c_in * k * k))
            .expect("contiguous weight");
        let dcol = matmul(w2d.t(), dy2d.view()); // (c_in*k*k, batch*ho*wo)
        col2im(&dcol, batch, c_in, h, w, k, self.stride, self.pad, ho, wo)
    }
}

/// Valid output-column range for kernel column `kj`: `xj = j*stride + kj - pad`
/// must land in `[0, w)`.
#[inline]
fn col_range(kj: usize, pad: usize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = if kj >= pad { 0 } else { (pad - kj).div_ceil(stride) };
    // largest j with j*stride + kj - pad <= w - 1
    let hi = if w + pad > kj { ((w + pad - kj - 1) / stride + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

/// Lower the input into a (c_in*k*k, batch*ho*wo) matrix, batch-major columns.
fn im2col(
    x: ArrayView4<f64>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let (batch, c_in, h, w) = x.dim();
    let rows = c_in * k * k;
    let mut col = Array2::<f64>::zeros((rows, batch * ho * wo));

    // Disjoint column stripes per batch item keep the parallel fill deterministic.
    let stripes: Vec<_> = col.axis_chunks_iter_mut(Axis(1), ho * wo).collect();
    stripes.into_par_iter().enumerate().for_each(|(b, mut stripe)| {
        let xb = x.index_axis(Axis(0), b);
        for c in 0..c_in {
            let plane = xb.index_axis(Axis(0), c);
            let plane_slice = plane.to_slice().expect("contiguous input plane");
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let (j_lo, j_hi) = col_range(kj, pad, stride, w, wo);
                    if j_lo >= j_hi {
                        continue;
                    }
                    let mut row_view = stripe.row_mut(row);
                    let row_slice = row_view.as_slice_mut().expect("contiguous stripe row");
                    for i in 0..ho {
                        let yi = (i * stride + ki) as isize - pad as isize;
                        if yi < 0 || yi >= h as isize {
                            continue;
                        }
                        let src_row = &plane_slice[yi as usize * w..][..w];
                        let dst = &mut row_slice[i * wo..][..wo];
                        let x0 = j_lo * stride + kj - pad;
                        if stride == 1 {
                            dst[j_lo..j_hi].copy_from_slice(&src_row[x0..x0 + (j_hi - j_lo)]);
                        } else {
                            let mut xj = x0;
                            for d in dst[j_lo..j_hi].iter_mut() {
                                *d = src_row[xj];
                                xj += stride;
                            }
                        }
                    }
                }
            }
        }
    });
    col
}

/// Adjoint of `im2col`: scatter-add columns back onto the input grid.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcol: &Array2<f64>,
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array4<f64> {
    let mut dx = Array4::<f64>::zeros((batch, c_in, h, w));
    let dcol_slice = dcol.as_slice().expect("contiguous column gradient");
    let items: Vec<_> = dx.axis_iter_mut(Axis(0)).collect();
    items.into_par_iter().enumerate().for_each(|(b, mut dxb)| {
        for c in 0..c_in {
            let mut plane = dxb.index_axis_mut(Axis(0), c);
            let plane_slice = plane.as_slice_mut().expect("contiguous input plane");
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let (j_lo, j_hi) = col_range(kj, pad, stride, w, wo);
                    if j_lo >= j_hi {
                        continue;
                    }
                    for i in 0..ho {
                        let yi = (i * stride + ki) as isize - pad as isize;
                        if yi < 0 || yi >= h as isize {
                            continue;
                        }
                        let src = &dcol_slice[row * batch * ho * wo + b * ho * wo + i * wo..][..wo];
                        let dst_row = &mut plane_slice[yi as usize * w..][..w];
                        let x0 = j_lo * stride + kj - pad;
                        if stride == 1 {
                            for (d, &v) in dst_row[x0..x0 + (j_hi - j_lo)].iter_mut().zip(src[j_lo..j_hi].iter()) {
                                *d += v;
                            }
                        } else {
                            let mut xj = x0;
                            for &v in src[j_lo..j_hi].iter() {
                                dst_row[xj] += v;
                                xj += stride;
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::component_rng;
    use approx::assert_abs_diff_eq;

    /// Direct convolution, the independent oracle for the im2col path.
    fn conv_naive(x: &Array4<f64>, w: &Array4<f64>, bias: &Array1<f64>, stride: usize, pad: usize) -> Array4<f64> {
        let (batch, c_in, h, wid) = x.dim();
        let (c_out, _, k, _) = w.dim();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wid + 2 * pad - k) / stride + 1;
        let mut y = Array4::<f64>::zeros((batch, c_out, ho, wo));
        for b in 0..batch {
            for co in 0..c_out {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = bias[co];
                        for ci in 0..c_in {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let yi = (i * stride + ki) as isize - pad as isize;
                                    let xj = (j * stride + kj) as isize - pad as isize;
                                    if yi >= 0 && (yi as usize) < h && xj >= 0 && (xj as usize) < wid {
                                        acc += x[[b, ci, yi as usize, xj as usize]]
                                            * w[[co, ci, ki, kj]];
                                    }
                                }
                            }
                        }
                        y[[b, co, i, j]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = component_rng(3, "conv-test");
        for &(stride, h, k) in &[(1usize, 7usize, 3usize), (2, 8, 3), (2, 6, 3), (1, 8, 5), (2, 8, 4)] {
            let mut conv = Conv2d::new(3, 5, k, stride, &mut rng);
            let x = Array4::from_shape_fn((2, 3, h, h), |(b, c, i, j)| {
                ((b + 2 * c + 3 * i + 5 * j) % 11) as f64 * 0.1 - 0.5
            });
            let fast = conv.forward(&x);
            let slow = conv_naive(&x, &conv.weight, &conv.bias, stride, conv.pad);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = component_rng(4, "conv-grad");
        let mut conv = Conv2d::new(2, 3, 3, 1, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 5, 5), |(b, c, i, j)| {
            0.1 * ((b * 7 + c * 3 + i * 2 + j) % 9) as f64 - 0.3
        });

        // Scalar objective: sum of outputs weighted by a fixed pattern.
        let pattern = |y: &Array4<f64>| -> f64 {
            y.indexed_iter()
                .map(|((b, c, i, j), v)| v * (1.0 + ((b + c + i + j) % 3) as f64))
                .sum()
        };

        let y = conv.forward(&x);
        let mut grad_out = Array4::zeros(y.dim());
        for ((b, c, i, j), g) in grad_out.indexed_iter_mut() {
            *g = 1.0 + ((b + c + i + j) % 3) as f64;
        }
        let dx = conv.backward(&grad_out);

        let h = 1e-6;
        // input gradient
        for &(b, c, i, j) in &[(0, 0, 0, 0), (1, 1, 2, 3), (0, 1, 4, 4)] {
            let mut xp = x.clone();
            xp[[b, c, i, j]] += h;
            let mut xm = x.clone();
            xm[[b, c, i, j]] -= h;
            let fd = (pattern(&conv.infer(xp.view())) - pattern(&conv.infer(xm.view()))) / (2.0 * h);
            assert_abs_diff_eq!(dx[[b, c, i, j]], fd, epsilon = 1e-6);
        }
        // weight gradient
        for &(co, ci, ki, kj) in &[(0, 0, 0, 0), (2, 1, 2, 2), (1, 0, 1, 2)] {
            let orig = conv.weight[[co, ci, ki, kj]];
            conv.weight[[co, ci, ki, kj]] = orig + h;
            let fp = pattern(&conv.infer(x.view()));
            conv.weight[[co, ci, ki, kj]] = orig - h;
            let fm = pattern(&conv.infer(x.view()));
            conv.weight[[co, ci, ki, kj]] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert_abs_diff_eq!(conv.grad_weight[[co, ci, ki, kj]], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn stride_two_gradients_match_finite_differences() {
        let mut rng = component_rng(6, "conv-grad-s2");
        let mut conv = Conv2d::new(2, 2, 3, 2, &mut rng);
        let x = Array4::from_shape_fn((1, 2, 8, 8), |(_, c, i, j)| 0.05 * ((c + 2 * i + j) % 7) as f64);
        let y = conv.forward(&x);
        let grad_out = Array4::ones(y.dim());
        let dx = conv.backward(&grad_out);
        let h = 1e-6;
        for &(c, i, j) in &[(0usize, 0usize, 0usize), (1, 3, 4), (0, 7, 7), (1, 4, 0)] {
            let mut xp = x.clone();
            xp[[0, c, i, j]] += h;
            let mut xm = x.clone();
            xm[[0, c, i, j]] -= h;
            let fd = (conv.infer(xp.view()).sum() - conv.infer(xm.view()).sum()) / (2.0 * h);
            assert_abs_diff_eq!(dx[[0, c, i, j]], fd, epsilon = 1e-6);
        }
    }

    // Padded views are not contiguous; the slice-based lowering must reject
    // them loudly rather than silently misread.
    #[test]
    fn lowering_requires_standard_layout() {
        let mut rng = component_rng(5, "conv-layout");
        let conv = Conv2d::new(1, 2, 3, 1, &mut rng);
        let x = Array4::from_shape_fn((1, 1, 4, 4), |(_, _, i, j)| (i + j) as f64);
        let y = conv.infer(x.view());
        assert_eq!(y.dim(), (1, 2, 4, 4));
    }
}
