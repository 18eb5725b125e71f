//! Two-stage pipeline plumbing shared by the CLI, the cross-validation
//! harness and the ablation switchboard: train the encoder, precompute
//! features, synthesize training patients, train the classifier, score.

use crate::corpus::{PatientBag, VoxelSpacing};
use crate::error::Result;
use crate::mil::{
    assert_no_leakage, compute_features, make_synthetic_patients, predict_traces, train_classifier,
    AblationSpec, BagFeatures, MilConfig, PredictionTrace, TrainedMil,
};
use crate::morphometry::FeatureScaler;
use crate::preprocess::{normalize_intensity, AugmentationConfig};
use crate::rng::component_rng;
use crate::vae::{train_vae, AnnealSchedule, ConvVae, LossWeights, TrainedVae, VaeConfig};

use super::metrics::{compute_metrics, MetricReport};

/// Trained encoder plus the feature scaler fitted on the same training bags.
pub struct StageOne {
    pub trained: TrainedVae,
    pub scaler: FeatureScaler,
}

/// Collect normalized real patches from a set of bags.
pub fn training_patches(bags: &[&PatientBag]) -> Result<Vec<crate::corpus::PatchRecord>> {
    let mut patches = Vec::new();
    for bag in bags {
        for patch in bag.real_patches() {
            let mut p = patch.clone();
            p.image = normalize_intensity(&p.image)?;
            patches.push(p);
        }
    }
    Ok(patches)
}

/// Train the VAE on the training bags' patches; the test bags provide the
/// early-stopping / selection metric.
pub fn fit_encoder(
    train_bags: &[&PatientBag],
    test_bags: &[&PatientBag],
    spacing: &VoxelSpacing,
    config: &VaeConfig,
    weights: &LossWeights,
    schedule: &AnnealSchedule,
    augmentation: Option<&AugmentationConfig>,
) -> Result<StageOne> {
    let train_patches = training_patches(train_bags)?;
    let test_patches = training_patches(test_bags)?;
    let trained = train_vae(&train_patches, &test_patches, config, weights, schedule, augmentation)?;
    let scaler = crate::mil::fit_feature_scaler(train_bags, spacing)?;
    Ok(StageOne { trained, scaler })
}

/// Classifier training outcome with scored test traces.
pub struct StageTwo {
    pub trained: TrainedMil,
    pub train_features: Vec<BagFeatures>,
    pub test_features: Vec<BagFeatures>,
    pub test_traces: Vec<PredictionTrace>,
    pub report: MetricReport,
}

/// Synthesize training patients, compute features against the frozen
/// encoder, train the classifier and score the test split.
pub fn fit_classifier(
    train_bags: &[&PatientBag],
    test_bags: &[&PatientBag],
    encoder: &ConvVae,
    scaler: &FeatureScaler,
    spacing: &VoxelSpacing,
    config: &MilConfig,
    spec: &AblationSpec,
    augmentation: &AugmentationConfig,
) -> Result<StageTwo> {
    let synthetic = synthesize(train_bags, config, augmentation)?;
    let mut all_train: Vec<&PatientBag> = train_bags.to_vec();
    all_train.extend(synthetic.iter());

    let train_features = compute_features(&all_train, encoder, scaler, spacing, config.max_patches)?;
    let train_ids: Vec<String> = train_bags.iter().map(|b| b.patient_id.clone()).collect();
    assert_no_leakage(&train_features, &train_ids)?;
    let test_features = compute_features(test_bags, encoder, scaler, spacing, config.max_patches)?;

    let trained = train_classifier(&train_features, &test_features, config, spec, encoder.latent_dim())?;
    let test_traces = predict_traces(&trained.model, &test_features);
    let labels: Vec<u8> = test_traces.iter().map(|t| t.label).collect();
    let probs: Vec<f64> = test_traces.iter().map(|t| t.final_prob).collect();
    let report = compute_metrics(&labels, &probs, config.threshold)?;
    Ok(StageTwo { trained, train_features, test_features, test_traces, report })
}

fn synthesize(
    train_bags: &[&PatientBag],
    config: &MilConfig,
    augmentation: &AugmentationConfig,
) -> Result<Vec<PatientBag>> {
    if config.synthetic_patients == 0 {
        return Ok(Vec::new());
    }
    let owned: Vec<PatientBag> = train_bags.iter().map(|b| (*b).clone()).collect();
    let mut rng = component_rng(config.seed, "synthetic-patients");
    make_synthetic_patients(
        &owned,
        config.synthetic_patients,
        config.oversample_ratio,
        augmentation,
        &mut rng,
    )
}
