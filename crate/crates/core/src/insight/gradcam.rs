//! Encoder saliency maps.
//!
//! The scalar target (by default the squared norm of the posterior mean) is
//! backpropagated to the last 8x8 spatial activation; the gradient-weighted
//! maps are channel-averaged, upsampled bilinearly to the input size,
//! min-max normalized and thresholded to the top quarter of pixels.

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::gemm::matmul;
use crate::nn::Upsample2x;
use crate::vae::{image_batch, ConvVae};

/// Scalar whose gradient drives the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SaliencyTarget {
    /// `||mu||^2`, the total encoded information proxy.
    #[default]
    MuNorm,
    /// Sum of mu (signed variant, exposed for comparison).
    MuSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Input-sized map normalized to [0,1].
    pub values: Array2<f64>,
    /// Marks the top 25% of pixels (ties broken by scan order).
    pub threshold_mask: Array2<u8>,
    /// The raw map was constant; the mask degenerates to scan order.
    pub degenerate: bool,
}

/// Fraction of the heatmap's mass inside the foreground bounding box of
/// `mask`; 0 when the map carries no mass or the mask is empty.
pub fn mass_fraction_in_bbox(heatmap: &Array2<f64>, mask: &Array2<u8>) -> f64 {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for ((i, j), &v) in mask.indexed_iter() {
        if v > 0 {
            bounds = Some(match bounds {
                None => (i, i, j, j),
                Some((i0, i1, j0, j1)) => (i0.min(i), i1.max(i), j0.min(j), j1.max(j)),
            });
        }
    }
    let Some((i0, i1, j0, j1)) = bounds else { return 0.0 };
    let total: f64 = heatmap.sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut inside = 0.0;
    for i in i0..=i1 {
        for j in j0..=j1 {
            inside += heatmap[[i, j]];
        }
    }
    inside / total
}

/// Saliency map of the encoder for one patch.
pub fn grad_cam(encoder: &ConvVae, image: &Array2<f64>, target: SaliencyTarget) -> Result<Heatmap> {
    let x = image_batch(std::slice::from_ref(image));
    let act = encoder.trunk_infer(&x)?; // (1, c, s, s)
    let (_, c, s, _) = act.dim();
    let flat = act
        .view()
        .into_shape_with_order((1, c * s * s))
        .expect("contiguous activation")
        .to_owned();
    let mu = matmul(flat.view(), encoder.mu_head_weight().t()); // bias is irrelevant to the gradient

    // d(target)/d(mu), then back through the dense head onto the map.
    let dmu = match target {
        SaliencyTarget::MuNorm => mu.mapv(|v| 2.0 * v),
        SaliencyTarget::MuSum => mu.mapv(|_| 1.0),
    };
    let dflat = matmul(dmu.view(), encoder.mu_head_weight().view()); // (1, c*s*s)
    let dact = dflat.into_shape_with_order((1, c, s, s)).expect("contiguous gradient");

    // Channel-average the gradient-weighted maps.
    let mut cam = Array2::<f64>::zeros((s, s));
    for ch in 0..c {
        let a = act.index_axis(Axis(0), 0);
        let a = a.index_axis(Axis(0), ch);
        let g = dact.index_axis(Axis(0), 0);
        let g = g.index_axis(Axis(0), ch);
        for ((i, j), v) in cam.indexed_iter_mut() {
            *v += a[[i, j]] * g[[i, j]];
        }
    }
    cam.mapv_inplace(|v| v / c as f64);

    // Bilinear upsample from the trunk resolution to the input resolution.
    let input_size = x.dim().2;
    let mut up = cam
        .into_shape_with_order((1, 1, s, s))
        .expect("contiguous cam")
        .to_owned();
    while up.dim().2 < input_size {
        up = Upsample2x::infer(up.view());
    }
    let map: Array2<f64> = up.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned();

    Ok(normalize_and_threshold(map))
}

fn normalize_and_threshold(map: Array2<f64>) -> Heatmap {
    let min = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = !(max > min);
    let values = if degenerate {
        log::warn!("saliency map is constant; thresholding degenerates to scan order");
        Array2::zeros(map.raw_dim())
    } else {
        map.mapv(|v| (v - min) / (max - min))
    };

    let n = values.len();
    let quota = n / 4;
    let mut order: Vec<usize> = (0..n).collect();
    let flat: Vec<f64> = values.iter().cloned().collect();
    // stable: by value descending, scan order ascending among ties
    order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    let (h, w) = values.dim();
    let mut mask = Array2::<u8>::zeros((h, w));
    for &idx in order.iter().take(quota) {
        mask[[idx / w, idx % w]] = 1;
    }
    Heatmap { values, threshold_mask: mask, degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PATCH_SIZE;
    use crate::rng::component_rng;
    use crate::vae::VaeConfig;
    use rand::Rng as _;

    fn encoder() -> ConvVae {
        ConvVae::new(&VaeConfig { base: 2, latent_scalar: 4, seed: 3, ..VaeConfig::default() }).unwrap()
    }

    #[test]
    fn heatmap_range_and_mask_density() {
        let model = encoder();
        let mut rng = component_rng(5, "cam");
        let image = Array2::from_shape_simple_fn((PATCH_SIZE, PATCH_SIZE), || rng.random::<f64>());
        let map = grad_cam(&model, &image, SaliencyTarget::MuNorm).unwrap();
        assert!(map.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let density = map.threshold_mask.iter().filter(|&&v| v > 0).count();
        assert_eq!(density, PATCH_SIZE * PATCH_SIZE / 4); // floor(0.25 * 1024)
        assert!(!map.degenerate);
    }

    #[test]
    fn constant_input_degenerates_gracefully() {
        let model = encoder();
        let image = Array2::zeros((PATCH_SIZE, PATCH_SIZE));
        let map = grad_cam(&model, &image, SaliencyTarget::MuNorm).unwrap();
        // constant input can still yield non-constant activations through
        // bias terms; the contract is only that the call succeeds and the
        // mask quota holds
        let density = map.threshold_mask.iter().filter(|&&v| v > 0).count();
        assert_eq!(density, 256);
    }

    #[test]
    fn degenerate_map_uses_scan_order() {
        let map = normalize_and_threshold(Array2::from_elem((8, 8), 0.7));
        assert!(map.degenerate);
        assert_eq!(map.threshold_mask.iter().filter(|&&v| v > 0).count(), 16);
        // first 16 scan-order pixels marked
        assert_eq!(map.threshold_mask[[0, 0]], 1);
        assert_eq!(map.threshold_mask[[1, 7]], 1);
        assert_eq!(map.threshold_mask[[2, 0]], 0);
    }

    #[test]
    fn mass_fraction_detects_concentration() {
        let mut heat = Array2::zeros((32, 32));
        heat[[10, 10]] = 1.0;
        heat[[11, 10]] = 1.0;
        let mut mask = Array2::<u8>::zeros((32, 32));
        for i in 9..13 {
            for j in 9..13 {
                mask[[i, j]] = 1;
            }
        }
        assert_eq!(mass_fraction_in_bbox(&heat, &mask), 1.0);
        let empty = Array2::<u8>::zeros((32, 32));
        assert_eq!(mass_fraction_in_bbox(&heat, &empty), 0.0);
    }
}
