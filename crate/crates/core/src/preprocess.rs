//! Intensity normalization, patch selection/padding and augmentation.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{PatchRecord, PatientBag, PATCH_SIZE};
use crate::error::{LnmError, Result};
use crate::rng::Rng;

/// Augmentation switches and parameter ranges.
///
/// Spatial transforms (flips, translation) apply to image and mask alike;
/// intensity transforms (noise, gamma, bias field) touch only the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub flip_horizontal_prob: f64,
    pub flip_vertical_prob: f64,
    pub translate_prob: f64,
    /// Maximum shift in pixels along each axis.
    pub max_translate_px: usize,
    pub noise_prob: f64,
    /// Gaussian noise sigma range.
    pub noise_sigma: (f64, f64),
    pub gamma_prob: f64,
    /// Gamma correction exponent range.
    pub gamma_range: (f64, f64),
    pub bias_field_prob: f64,
    /// Coefficient range of the order-2 multiplicative bias polynomial.
    pub bias_field_coeff: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            flip_horizontal_prob: 0.5,
            flip_vertical_prob: 0.5,
            translate_prob: 0.5,
            max_translate_px: 3,
            noise_prob: 0.5,
            noise_sigma: (0.005, 0.02),
            gamma_prob: 0.5,
            gamma_range: (0.8, 1.2),
            bias_field_prob: 0.3,
            bias_field_coeff: (-0.15, 0.15),
        }
    }
}

impl AugmentationConfig {
    /// A configuration under which `augment` is the identity.
    pub fn disabled() -> Self {
        AugmentationConfig {
            flip_horizontal_prob: 0.0,
            flip_vertical_prob: 0.0,
            translate_prob: 0.0,
            max_translate_px: 0,
            noise_prob: 0.0,
            noise_sigma: (0.0, 0.0),
            gamma_prob: 0.0,
            gamma_range: (1.0, 1.0),
            bias_field_prob: 0.0,
            bias_field_coeff: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_horizontal_prob", self.flip_horizontal_prob),
            ("flip_vertical_prob", self.flip_vertical_prob),
            ("translate_prob", self.translate_prob),
            ("noise_prob", self.noise_prob),
            ("gamma_prob", self.gamma_prob),
            ("bias_field_prob", self.bias_field_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(LnmError::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        for (name, r) in [
            ("noise_sigma", self.noise_sigma),
            ("gamma_range", self.gamma_range),
            ("bias_field_coeff", self.bias_field_coeff),
        ] {
            if !(r.0.is_finite() && r.1.is_finite()) || r.0 > r.1 {
                return Err(LnmError::Config(format!("{name} range {r:?} is invalid")));
            }
        }
        if self.max_translate_px >= PATCH_SIZE {
            return Err(LnmError::Config(format!(
                "max_translate_px {} exceeds patch size {PATCH_SIZE}",
                self.max_translate_px
            )));
        }
        Ok(())
    }
}

/// Z-score the image, then min-max rescale to [0,1].
///
/// A constant image (zero variance) maps to all zeros so zero-padding slots
/// pass through unchanged.
pub fn normalize_intensity(image: &Array2<f64>) -> Result<Array2<f64>> {
    if image.iter().any(|v| !v.is_finite()) {
        return Err(LnmError::Validation("image contains NaN or infinite values".into()));
    }
    let n = image.len() as f64;
    let mean = image.sum() / n;
    let var = image.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Ok(Array2::zeros(image.raw_dim()));
    }
    let std = var.sqrt();
    let z = image.mapv(|v| (v - mean) / std);
    let min = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(z.mapv(|v| (v - min) / (max - min)))
}

/// Rank patches by mask area, apply the secondary-slice half-area rule,
/// keep at most `max_patches` and zero-pad the remaining slots.
pub fn select_patches(bag: &PatientBag, max_patches: usize) -> PatientBag {
    let mut selected = select_without_padding(bag, max_patches);
    while selected.len() < max_patches {
        selected.push(PatchRecord::zero_padding(&bag.patient_id));
    }
    PatientBag { patches: selected, ..bag.clone() }
}

/// Selection used by both `select_patches` and the generator-side cap.
pub fn select_without_padding(bag: &PatientBag, max_patches: usize) -> Vec<PatchRecord> {
    use std::collections::BTreeMap;

    // Largest slice area per node for the half-area rule.
    let mut node_max: BTreeMap<&str, usize> = BTreeMap::new();
    for p in bag.real_patches() {
        let area = p.mask_area();
        node_max
            .entry(p.node_id.as_str())
            .and_modify(|m| *m = (*m).max(area))
            .or_insert(area);
    }

    let mut candidates: Vec<&PatchRecord> = bag
        .real_patches()
        .filter(|p| {
            let area = p.mask_area();
            let largest = node_max[p.node_id.as_str()];
            // Keep a node's largest slice always; secondary slices only if
            // they cover at least half of that node's largest slice.
            area * 2 >= largest
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.mask_area()
            .cmp(&a.mask_area())
            .then_with(|| a.node_id.cmp(&b.node_id))
            .then_with(|| a.slice_index.cmp(&b.slice_index))
    });
    candidates.into_iter().take(max_patches).cloned().collect()
}

/// Apply the configured augmentations to one patch.
///
/// Deterministic given the RNG state; flips and translation move image and
/// mask together, intensity transforms touch only the image, and the output
/// image is clamped to [0,1].
pub fn augment(patch: &PatchRecord, cfg: &AugmentationConfig, rng: &mut Rng) -> Result<PatchRecord> {
    cfg.validate()?;
    let mut image = patch.image.clone();
    let mut mask = patch.mask.clone();

    if rng.random::<f64>() < cfg.flip_horizontal_prob {
        image = flip_columns(&image);
        mask = flip_columns(&mask);
    }
    if rng.random::<f64>() < cfg.flip_vertical_prob {
        image = flip_rows(&image);
        mask = flip_rows(&mask);
    }
    if cfg.max_translate_px > 0 && rng.random::<f64>() < cfg.translate_prob {
        let m = cfg.max_translate_px as i64;
        let dy = rng.random_range(-m..=m) as isize;
        let dx = rng.random_range(-m..=m) as isize;
        image = translate(&image, dy, dx, 0.0);
        mask = translate(&mask, dy, dx, 0u8);
    }
    if rng.random::<f64>() < cfg.noise_prob && cfg.noise_sigma.1 > 0.0 {
        let sigma = rng.random_range(cfg.noise_sigma.0..=cfg.noise_sigma.1);
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("valid normal");
            image.mapv_inplace(|v| v + normal.sample(rng));
        }
    }
    if rng.random::<f64>() < cfg.gamma_prob {
        let gamma = rng.random_range(cfg.gamma_range.0..=cfg.gamma_range.1);
        image.mapv_inplace(|v| v.clamp(0.0, 1.0).powf(gamma));
    }
    if rng.random::<f64>() < cfg.bias_field_prob {
        let coeff = |rng: &mut Rng| rng.random_range(cfg.bias_field_coeff.0..=cfg.bias_field_coeff.1);
        let (cx, cy, cxx, cyy, cxy) = (coeff(rng), coeff(rng), coeff(rng), coeff(rng), coeff(rng));
        let half = PATCH_SIZE as f64 / 2.0;
        for ((i, j), v) in image.indexed_iter_mut() {
            let u = (j as f64 + 0.5 - half) / half;
            let w = (i as f64 + 0.5 - half) / half;
            let field = 1.0 + cx * u + cy * w + cxx * u * u + cyy * w * w + cxy * u * w;
            *v *= field;
        }
    }

    image.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(PatchRecord { image, mask, ..patch.clone() })
}

fn flip_columns<T: Copy>(a: &Array2<T>) -> Array2<T> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(i, j)| a[[i, w - 1 - j]])
}

fn flip_rows<T: Copy>(a: &Array2<T>) -> Array2<T> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(i, j)| a[[h - 1 - i, j]])
}

fn translate<T: Copy>(a: &Array2<T>, dy: isize, dx: isize, fill: T) -> Array2<T> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let si = i as isize - dy;
        let sj = j as isize - dx;
        if si >= 0 && si < h as isize && sj >= 0 && sj < w as isize {
            a[[si as usize, sj as usize]]
        } else {
            fill
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_phantom_corpus, PhantomSpec};
    use crate::rng::component_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sample_patch() -> PatchRecord {
        let corpus = generate_phantom_corpus(&PhantomSpec { n_patients: 1, seed: 21, ..PhantomSpec::default() })
            .unwrap();
        corpus.bags[0].patches[0].clone()
    }

    #[test]
    fn constant_image_maps_to_zeros() {
        let image = Array2::from_elem((PATCH_SIZE, PATCH_SIZE), 5.0);
        let out = normalize_intensity(&image).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_spans_zero_to_one() {
        let image = Array2::from_shape_fn((PATCH_SIZE, PATCH_SIZE), |(i, j)| (i * 32 + j) as f64 * 0.3 - 4.0);
        let out = normalize_intensity(&image).unwrap();
        let min = out.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(min, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(max, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = component_rng(5, "norm-idem");
        for _ in 0..10 {
            let image = Array2::from_shape_simple_fn((PATCH_SIZE, PATCH_SIZE), || rng.random::<f64>() * 7.0 - 2.0);
            let once = normalize_intensity(&image).unwrap();
            let twice = normalize_intensity(&once).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut image = Array2::zeros((PATCH_SIZE, PATCH_SIZE));
        image[[3, 3]] = f64::NAN;
        assert!(matches!(normalize_intensity(&image), Err(LnmError::Validation(_))));
    }

    fn bag_with_areas(areas: &[(&str, usize, usize)]) -> PatientBag {
        // (node_id, slice_index, area): draw `area` pixels in a row-major block
        let patches = areas
            .iter()
            .map(|(node, slice, area)| {
                let mut mask = Array2::<u8>::zeros((PATCH_SIZE, PATCH_SIZE));
                for k in 0..*area {
                    mask[[k / PATCH_SIZE, k % PATCH_SIZE]] = 1;
                }
                PatchRecord {
                    image: Array2::from_elem((PATCH_SIZE, PATCH_SIZE), 0.5),
                    mask,
                    patient_id: "px".into(),
                    node_id: (*node).to_string(),
                    slice_index: *slice,
                    is_padding: false,
                }
            })
            .collect();
        PatientBag {
            patient_id: "px".into(),
            patches,
            age: 60.0,
            sex: crate::corpus::Sex::M,
            t_stage: crate::corpus::TStage::T2,
            label: 0,
            is_synthetic: false,
            parent_id: None,
            nodes: vec![],
        }
    }

    #[test]
    fn keeps_largest_up_to_limit() {
        let areas: Vec<(String, usize, usize)> = (0..20).map(|k| (format!("n{k}"), 0usize, 10 + k)).collect();
        let refs: Vec<(&str, usize, usize)> = areas.iter().map(|(n, s, a)| (n.as_str(), *s, *a)).collect();
        let bag = bag_with_areas(&refs);
        let out = select_patches(&bag, 15);
        assert_eq!(out.patches.len(), 15);
        assert!(out.patches.iter().all(|p| !p.is_padding));
        // the 15 largest survive: areas 15..=29
        assert!(out.patches.iter().all(|p| p.mask_area() >= 15));
    }

    #[test]
    fn half_area_rule_boundary() {
        let bag = bag_with_areas(&[("n0", 0, 100), ("n0", 1, 49), ("n1", 0, 100), ("n1", 1, 50)]);
        let out = select_patches(&bag, 15);
        let kept: Vec<(String, usize)> = out
            .patches
            .iter()
            .filter(|p| !p.is_padding)
            .map(|p| (p.node_id.clone(), p.slice_index))
            .collect();
        assert!(kept.contains(&("n0".into(), 0)));
        assert!(!kept.contains(&("n0".into(), 1)), "49 < 50 must be dropped");
        assert!(kept.contains(&("n1".into(), 1)), "50 >= 50 must be kept");
    }

    #[test]
    fn pads_small_bags() {
        let bag = bag_with_areas(&[("n0", 0, 30), ("n1", 0, 20), ("n2", 0, 10)]);
        let out = select_patches(&bag, 15);
        assert_eq!(out.patches.len(), 15);
        assert_eq!(out.patches.iter().filter(|p| p.is_padding).count(), 12);
        for pad in out.patches.iter().filter(|p| p.is_padding) {
            assert_eq!(pad.mask_area(), 0);
            assert!(pad.image.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn selection_is_pure() {
        let bag = bag_with_areas(&[("n0", 0, 30), ("n1", 0, 40)]);
        let a = select_patches(&bag, 15);
        let b = select_patches(&bag, 15);
        assert_eq!(a, b);
    }

    #[test]
    fn double_flip_is_identity() {
        let patch = sample_patch();
        let flipped = PatchRecord {
            image: flip_columns(&patch.image),
            mask: flip_columns(&patch.mask),
            ..patch.clone()
        };
        let back = PatchRecord {
            image: flip_columns(&flipped.image),
            mask: flip_columns(&flipped.mask),
            ..flipped.clone()
        };
        assert_eq!(patch, back);
    }

    #[test]
    fn neutral_parameters_are_identity() {
        let patch = sample_patch();
        let mut rng = component_rng(1, "augment-identity");
        let out = augment(&patch, &AugmentationConfig::disabled(), &mut rng).unwrap();
        assert_eq!(patch, out);
    }

    #[test]
    fn translation_preserves_mask_area_in_frame() {
        let patch = sample_patch();
        // nodes are centred with margin, +/-2 px keeps them in frame
        let shifted = PatchRecord {
            image: translate(&patch.image, 2, -2, 0.0),
            mask: translate(&patch.mask, 2, -2, 0u8),
            ..patch.clone()
        };
        assert_eq!(patch.mask_area(), shifted.mask_area());
    }

    #[test]
    fn oversize_translation_rejected() {
        let patch = sample_patch();
        let cfg = AugmentationConfig { max_translate_px: PATCH_SIZE, ..AugmentationConfig::default() };
        let mut rng = component_rng(2, "augment-oversize");
        assert!(matches!(augment(&patch, &cfg, &mut rng), Err(LnmError::Config(_))));
    }

    #[test]
    fn augmentation_is_deterministic_under_fixed_rng() {
        let patch = sample_patch();
        let cfg = AugmentationConfig::default();
        let a = augment(&patch, &cfg, &mut component_rng(9, "aug")).unwrap();
        let b = augment(&patch, &cfg, &mut component_rng(9, "aug")).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn augmented_images_stay_in_unit_range(seed in 0u64..500) {
            let patch = sample_patch();
            let cfg = AugmentationConfig::default();
            let mut rng = component_rng(seed, "aug-range");
            let mut current = patch;
            for _ in 0..3 {
                current = augment(&current, &cfg, &mut rng).unwrap();
                prop_assert!(current.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!(current.mask.iter().all(|&v| v <= 1));
            }
        }
    }
}
