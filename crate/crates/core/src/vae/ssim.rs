//! Windowed structural similarity with an analytic gradient.
//!
//! Uniform 8x8 windows slide with stride 1 over valid positions; per-window
//! statistics come from summed-area tables, so each image costs O(H*W). The
//! gradient of the mean SSIM with respect to the second image decomposes per
//! window into `alpha + beta * x_p + gamma * y_p`; the per-pixel sums of the
//! three coefficient maps are again box sums.

use ndarray::Array2;

pub const SSIM_WINDOW: usize = 8;
const C1: f64 = 1e-4; // (0.01 * L)^2, L = 1
const C2: f64 = 9e-4; // (0.03 * L)^2

/// Summed-area table: `sat[i][j]` is the sum over the `i x j` top-left block.
fn integral(a: &Array2<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    let mut sat = Array2::<f64>::zeros((h + 1, w + 1));
    for i in 0..h {
        for j in 0..w {
            sat[[i + 1, j + 1]] = a[[i, j]] + sat[[i, j + 1]] + sat[[i + 1, j]] - sat[[i, j]];
        }
    }
    sat
}

#[inline]
fn box_sum(sat: &Array2<f64>, i0: usize, j0: usize, i1: usize, j1: usize) -> f64 {
    sat[[i1, j1]] - sat[[i0, j1]] - sat[[i1, j0]] + sat[[i0, j0]]
}

struct WindowStats {
    mu_x: f64,
    mu_y: f64,
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
    s: f64,
}

fn window_stats(
    sx: &Array2<f64>,
    sy: &Array2<f64>,
    sxx: &Array2<f64>,
    syy: &Array2<f64>,
    sxy: &Array2<f64>,
    i: usize,
    j: usize,
    win: usize,
) -> WindowStats {
    let n = (win * win) as f64;
    let (i1, j1) = (i + win, j + win);
    let mu_x = box_sum(sx, i, j, i1, j1) / n;
    let mu_y = box_sum(sy, i, j, i1, j1) / n;
    let var_x = box_sum(sxx, i, j, i1, j1) / n - mu_x * mu_x;
    let var_y = box_sum(syy, i, j, i1, j1) / n - mu_y * mu_y;
    let cov = box_sum(sxy, i, j, i1, j1) / n - mu_x * mu_y;
    let a1 = 2.0 * mu_x * mu_y + C1;
    let a2 = 2.0 * cov + C2;
    let b1 = mu_x * mu_x + mu_y * mu_y + C1;
    let b2 = var_x + var_y + C2;
    WindowStats { mu_x, mu_y, a1, a2, b1, b2, s: (a1 * a2) / (b1 * b2) }
}

/// Mean windowed SSIM between two equally sized images.
pub fn ssim(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let (h, w) = x.dim();
    assert_eq!(x.dim(), y.dim(), "ssim images must have equal shape");
    let win = SSIM_WINDOW.min(h).min(w);
    let sx = integral(x);
    let sy = integral(y);
    let sxx = integral(&(x * x));
    let syy = integral(&(y * y));
    let sxy = integral(&(x * y));
    let (nh, nw) = (h - win + 1, w - win + 1);
    let mut total = 0.0;
    for i in 0..nh {
        for j in 0..nw {
            total += window_stats(&sx, &sy, &sxx, &syy, &sxy, i, j, win).s;
        }
    }
    total / (nh * nw) as f64
}

/// Mean windowed SSIM and its gradient with respect to `y`.
pub fn ssim_with_grad(x: &Array2<f64>, y: &Array2<f64>) -> (f64, Array2<f64>) {
    let (h, w) = x.dim();
    assert_eq!(x.dim(), y.dim(), "ssim images must have equal shape");
    let win = SSIM_WINDOW.min(h).min(w);
    let n = (win * win) as f64;
    let sx = integral(x);
    let sy = integral(y);
    let sxx = integral(&(x * x));
    let syy = integral(&(y * y));
    let sxy = integral(&(x * y));
    let (nh, nw) = (h - win + 1, w - win + 1);

    let mut alpha = Array2::<f64>::zeros((nh, nw));
    let mut beta = Array2::<f64>::zeros((nh, nw));
    let mut gamma = Array2::<f64>::zeros((nh, nw));
    let mut total = 0.0;
    for i in 0..nh {
        for j in 0..nw {
            let st = window_stats(&sx, &sy, &sxx, &syy, &sxy, i, j, win);
            total += st.s;
            let scale = 2.0 / (n * st.b1 * st.b2);
            alpha[[i, j]] = scale * (st.mu_x * (st.a2 - st.a1) + st.s * st.mu_y * (st.b1 - st.b2));
            beta[[i, j]] = scale * st.a1;
            gamma[[i, j]] = -scale * st.s * st.b1;
        }
    }

    // Sum coefficients over all windows covering each pixel.
    let sa = integral(&alpha);
    let sb = integral(&beta);
    let sg = integral(&gamma);
    let n_windows = (nh * nw) as f64;
    let mut grad = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            // windows with top-left in [i-win+1, i] x [j-win+1, j], clipped
            let i0 = i.saturating_sub(win - 1).min(nh);
            let j0 = j.saturating_sub(win - 1).min(nw);
            let i1 = (i + 1).min(nh);
            let j1 = (j + 1).min(nw);
            if i0 >= i1 || j0 >= j1 {
                continue;
            }
            let a = box_sum(&sa, i0, j0, i1, j1);
            let b = box_sum(&sb, i0, j0, i1, j1);
            let g = box_sum(&sg, i0, j0, i1, j1);
            grad[[i, j]] = (a + b * x[[i, j]] + g * y[[i, j]]) / n_windows;
        }
    }
    (total / n_windows, grad)
}
