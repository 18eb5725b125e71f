//! Per-bag feature assembly: encoder latents, normalized node morphometry
//! and clinical covariates, precomputed once against a frozen encoder.

use ndarray::Array2;
use rayon::prelude::*;

use crate::corpus::{PatientBag, VoxelSpacing};
use crate::error::{LnmError, Result};
use crate::morphometry::{apply_scaler, fit_scaler, node_features, FeatureScaler, NodeFeatures, FEATURE_COUNT};
use crate::preprocess::{normalize_intensity, select_patches};
use crate::vae::{image_batch, ConvVae};

/// Everything the classifier sees for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct BagFeatures {
    pub patient_id: String,
    pub label: f64,
    /// (n_real_nodes, latent_dim) encoder posterior means.
    pub latents: Array2<f64>,
    /// (n_real_nodes, 5) normalized morphometric features.
    pub node_features: Array2<f64>,
    /// [age/100, sex, T1..T4 one-hot].
    pub clinical: [f64; 6],
    /// Normalized features of the node with the largest raw short axis.
    pub largest_node_features: [f64; FEATURE_COUNT],
    pub is_synthetic: bool,
    pub parent_id: Option<String>,
}

impl BagFeatures {
    pub fn n_nodes(&self) -> usize {
        self.latents.dim().0
    }
}

pub const CLINICAL_LEN: usize = 6;

/// Fit the morphometry scaler on the training bags' real patches.
pub fn fit_feature_scaler(train_bags: &[&PatientBag], spacing: &VoxelSpacing) -> Result<FeatureScaler> {
    let mut features = Vec::new();
    for bag in train_bags {
        for patch in bag.real_patches() {
            features.push(node_features(&patch.mask, spacing)?);
        }
    }
    fit_scaler(&features)
}

/// Compute the feature bundle for one bag against a frozen encoder.
pub fn compute_bag_features(
    bag: &PatientBag,
    encoder: &ConvVae,
    scaler: &FeatureScaler,
    spacing: &VoxelSpacing,
    max_patches: usize,
) -> Result<BagFeatures> {
    let selected = select_patches(bag, max_patches);
    let real: Vec<_> = selected.real_patches().cloned().collect();
    let latent_dim = encoder.latent_dim();

    let mut latents = Array2::<f64>::zeros((real.len(), latent_dim));
    let mut normalized = Array2::<f64>::zeros((real.len(), FEATURE_COUNT));
    let mut raw_features: Vec<NodeFeatures> = Vec::with_capacity(real.len());
    if !real.is_empty() {
        let images: Vec<_> = real
            .iter()
            .map(|p| normalize_intensity(&p.image))
            .collect::<Result<Vec<_>>>()?;
        let (mu, _) = encoder.encode_batch(&image_batch(&images))?;
        latents.assign(&mu);
        for (k, patch) in real.iter().enumerate() {
            let f = node_features(&patch.mask, spacing)?;
            let scaled = apply_scaler(&f, scaler);
            for (j, v) in scaled.iter().enumerate() {
                normalized[[k, j]] = *v;
            }
            raw_features.push(f);
        }
    }

    let largest_node_features = raw_features
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.short_axis_mm.total_cmp(&b.short_axis_mm))
        .map(|(k, _)| {
            let mut out = [0.0; FEATURE_COUNT];
            for (j, v) in out.iter_mut().enumerate() {
                *v = normalized[[k, j]];
            }
            out
        })
        .unwrap_or([0.0; FEATURE_COUNT]);

    let mut clinical = [0.0; CLINICAL_LEN];
    clinical[0] = bag.age / 100.0;
    clinical[1] = bag.sex.as_feature();
    let one_hot = bag.t_stage.one_hot();
    clinical[2..6].copy_from_slice(&one_hot);

    Ok(BagFeatures {
        patient_id: bag.patient_id.clone(),
        label: bag.label as f64,
        latents,
        node_features: normalized,
        clinical,
        largest_node_features,
        is_synthetic: bag.is_synthetic,
        parent_id: bag.parent_id.clone(),
    })
}

/// Feature bundles for many bags, parallel across patients.
pub fn compute_features(
    bags: &[&PatientBag],
    encoder: &ConvVae,
    scaler: &FeatureScaler,
    spacing: &VoxelSpacing,
    max_patches: usize,
) -> Result<Vec<BagFeatures>> {
    bags.par_iter()
        .map(|bag| compute_bag_features(bag, encoder, scaler, spacing, max_patches))
        .collect()
}

/// Guard for cross-validation: every synthetic bag must trace back to one of
/// the allowed parent ids, and scalers must be fitted on training data only.
pub fn assert_no_leakage(features: &[BagFeatures], allowed_parents: &[String]) -> Result<()> {
    use std::collections::BTreeSet;
    let allowed: BTreeSet<&str> = allowed_parents.iter().map(|s| s.as_str()).collect();
    for f in features {
        if f.is_synthetic {
            match &f.parent_id {
                Some(parent) if allowed.contains(parent.as_str()) => {}
                Some(parent) => {
                    return Err(LnmError::Validation(format!(
                        "synthetic patient {} derives from {parent}, which is outside the training split",
                        f.patient_id
                    )));
                }
                None => {
                    return Err(LnmError::Validation(format!(
                        "synthetic patient {} has no recorded parent",
                        f.patient_id
                    )));
                }
            }
        }
    }
    Ok(())
}
