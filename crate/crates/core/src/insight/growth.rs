//! Latent growth direction and decoder traversal.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{LnmError, Result};
use crate::vae::ConvVae;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthDirection {
    /// `mean(latents of large nodes) - mean(latents of small nodes)`.
    pub direction: Vec<f64>,
    pub unit_direction: Vec<f64>,
    pub small_cutoff_mm: f64,
    pub large_cutoff_mm: f64,
    pub n_small: usize,
    pub n_large: usize,
}

/// Direction between the average latent vectors of small and large nodes.
///
/// Small nodes have a short axis at or below the `small_pct` percentile,
/// large ones at or above the `large_pct` percentile.
pub fn growth_direction(
    latents: &Array2<f64>,
    short_axes_mm: &[f64],
    small_pct: f64,
    large_pct: f64,
) -> Result<GrowthDirection> {
    let n = latents.dim().0;
    if short_axes_mm.len() != n {
        return Err(LnmError::Validation(format!(
            "{n} latent rows but {} short-axis values",
            short_axes_mm.len()
        )));
    }
    if n == 0 {
        return Err(LnmError::Config("growth direction needs at least one sample".into()));
    }
    if !(0.0..=100.0).contains(&small_pct) || !(0.0..=100.0).contains(&large_pct) || small_pct >= large_pct {
        return Err(LnmError::Config(format!(
            "percentiles must satisfy 0 <= small ({small_pct}) < large ({large_pct}) <= 100"
        )));
    }
    let small_cutoff = percentile(short_axes_mm, small_pct);
    let large_cutoff = percentile(short_axes_mm, large_pct);
    if small_cutoff >= large_cutoff {
        return Err(LnmError::Config(format!(
            "small and large groups overlap: cutoffs {small_cutoff:.3} and {large_cutoff:.3} mm"
        )));
    }

    let dim = latents.dim().1;
    let mut small_mean = Array1::<f64>::zeros(dim);
    let mut large_mean = Array1::<f64>::zeros(dim);
    let (mut n_small, mut n_large) = (0usize, 0usize);
    for (i, &axis) in short_axes_mm.iter().enumerate() {
        if axis <= small_cutoff {
            small_mean += &latents.row(i);
            n_small += 1;
        }
        if axis >= large_cutoff {
            large_mean += &latents.row(i);
            n_large += 1;
        }
    }
    if n_small == 0 || n_large == 0 {
        return Err(LnmError::Config(format!(
            "empty group: {n_small} small and {n_large} large nodes"
        )));
    }
    small_mean.mapv_inplace(|v| v / n_small as f64);
    large_mean.mapv_inplace(|v| v / n_large as f64);
    let direction = &large_mean - &small_mean;
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit = if norm > 0.0 { direction.mapv(|v| v / norm) } else { direction.clone() };
    Ok(GrowthDirection {
        direction: direction.to_vec(),
        unit_direction: unit.to_vec(),
        small_cutoff_mm: small_cutoff,
        large_cutoff_mm: large_cutoff,
        n_small,
        n_large,
    })
}

/// Linear-interpolation percentile on a copy of the data.
fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Decode `mu + m * direction` for each multiple, in the given order.
pub fn render_traversal(
    decoder: &ConvVae,
    mu: &Array1<f64>,
    direction: &[f64],
    multiples: &[f64],
) -> Result<Vec<Array2<f64>>> {
    if direction.len() != mu.len() {
        return Err(LnmError::Validation(format!(
            "direction length {} does not match latent length {}",
            direction.len(),
            mu.len()
        )));
    }
    multiples
        .iter()
        .map(|&m| {
            let z = Array1::from_shape_fn(mu.len(), |d| mu[d] + m * direction[d]);
            decoder.decode(&z)
        })
        .collect()
}

/// Pixels brighter than half of the image's dynamic range; a cheap proxy for
/// the decoded node's area.
pub fn node_area_proxy(image: &Array2<f64>) -> usize {
    let min = image.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = image.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return 0;
    }
    let cut = (min + max) / 2.0;
    image.iter().filter(|&&v| v > cut).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::component_rng;
    use crate::vae::VaeConfig;
    use rand::Rng as _;

    #[test]
    fn constant_offset_is_recovered_exactly() {
        let mut rng = component_rng(1, "growth");
        let n = 20;
        let dim = 5;
        let offset: Vec<f64> = (0..dim).map(|d| d as f64 * 0.5 - 1.0).collect();
        let mut latents = Array2::<f64>::zeros((2 * n, dim));
        let mut axes = Vec::new();
        for i in 0..n {
            for d in 0..dim {
                let base = rng.random::<f64>();
                latents[[i, d]] = base;
                latents[[n + i, d]] = base + offset[d];
            }
            axes.push(3.0); // small
        }
        for _ in 0..n {
            axes.push(9.0); // large
        }
        let g = growth_direction(&latents, &axes, 25.0, 75.0).unwrap();
        // small group = first n rows, large group = offset rows; the means
        // differ by exactly the offset
        for (got, want) in g.direction.iter().zip(offset.iter()) {
            approx::assert_abs_diff_eq!(got, want, epsilon = 1e-9);
        }
        assert_eq!((g.n_small, g.n_large), (n, n));
    }

    #[test]
    fn equal_percentiles_rejected() {
        let latents = Array2::<f64>::zeros((4, 2));
        let axes = [3.0, 4.0, 8.0, 9.0];
        assert!(matches!(
            growth_direction(&latents, &axes, 50.0, 50.0),
            Err(LnmError::Config(_))
        ));
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = component_rng(2, "growth-shift");
        let latents = Array2::from_shape_simple_fn((12, 3), || rng.random::<f64>());
        let axes: Vec<f64> = (0..12).map(|i| 3.0 + i as f64).collect();
        let a = growth_direction(&latents, &axes, 25.0, 75.0).unwrap();
        let shifted = latents.mapv(|v| v + 13.7);
        let b = growth_direction(&shifted, &axes, 25.0, 75.0).unwrap();
        for (x, y) in a.direction.iter().zip(b.direction.iter()) {
            approx::assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn traversal_center_is_plain_reconstruction() {
        let model = ConvVae::new(&VaeConfig { base: 2, latent_scalar: 4, seed: 6, ..VaeConfig::default() }).unwrap();
        let mut rng = component_rng(3, "traversal");
        let mu = Array1::from_shape_simple_fn(model.latent_dim(), || rng.random::<f64>() - 0.5);
        let direction: Vec<f64> = (0..model.latent_dim()).map(|_| rng.random::<f64>()).collect();
        let multiples = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let strip = render_traversal(&model, &mu, &direction, &multiples).unwrap();
        assert_eq!(strip.len(), multiples.len());
        let center = model.decode(&mu).unwrap();
        assert_eq!(strip[2], center);
    }

    #[test]
    fn area_proxy_counts_bright_pixels() {
        let mut img = Array2::zeros((8, 8));
        img[[2, 2]] = 1.0;
        img[[2, 3]] = 0.9;
        img[[5, 5]] = 0.2;
        assert_eq!(node_area_proxy(&img), 2);
        assert_eq!(node_area_proxy(&Array2::zeros((4, 4))), 0);
    }
}
