//! Joint training of both MLPs on the patient-level binary cross-entropy.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use super::features::BagFeatures;
use super::model::{bce_with_grad, AblationSpec, MilConfig, MilModel, PredictionTrace};
use crate::error::{LnmError, Result};
use crate::evaluation::roc_auc;
use crate::nn::{scale_grads, zero_grads, AdamW};
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MilEpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_auc: f64,
    pub test_auc: f64,
}

pub struct TrainedMil {
    pub model: MilModel,
    pub history: Vec<MilEpochMetrics>,
    pub best_epoch: usize,
    pub best_test_auc: f64,
}

/// Train the classifier on precomputed features; the encoder stays frozen by
/// construction (only its outputs are consumed). The parameters with the
/// best test AUC are restored into the returned model.
pub fn train_classifier(
    train_features: &[BagFeatures],
    test_features: &[BagFeatures],
    config: &MilConfig,
    spec: &AblationSpec,
    latent_dim: usize,
) -> Result<TrainedMil> {
    if train_features.is_empty() {
        return Err(LnmError::Validation("classifier training set is empty".into()));
    }
    let n_pos = train_features.iter().filter(|f| f.label > 0.5).count();
    if n_pos == 0 || n_pos == train_features.len() {
        return Err(LnmError::Validation(format!(
            "classifier training set has a single class ({n_pos} of {} positive)",
            train_features.len()
        )));
    }

    let mut model = MilModel::new(config, spec, latent_dim)?;
    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut shuffle_rng = Rng::seed_from_u64(derive_seed(config.seed, "mil-shuffle"));
    let mut dropout_rng = Rng::seed_from_u64(derive_seed(config.seed, "mil-dropout"));

    let mut history = Vec::new();
    let mut best_test_auc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_state = None;

    let mut indices: Vec<usize> = (0..train_features.len()).collect();
    for epoch in 0..config.max_epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0f64;
        let micro: Vec<&[usize]> = indices.chunks(config.batch_size).collect();
        for group in micro.chunks(config.accumulation_steps) {
            zero_grads(&mut model.params());
            for chunk in group {
                let batch: Vec<&BagFeatures> = chunk.iter().map(|&i| &train_features[i]).collect();
                let labels: Vec<f64> = batch.iter().map(|f| f.label).collect();
                let fwd = model.forward_train(&batch, &mut dropout_rng);
                let (loss, dfinal) = bce_with_grad(&fwd.final_probs, &labels);
                if !loss.is_finite() {
                    return Err(LnmError::Numerical(format!(
                        "classifier loss diverged at epoch {epoch}: bce = {loss}"
                    )));
                }
                model.backward(&fwd, &dfinal);
                epoch_loss += loss;
                batches += 1.0;
            }
            scale_grads(&mut model.params(), 1.0 / group.len() as f64);
            optimizer.step(&mut model.params());
        }

        let train_auc = split_auc(&model, train_features);
        let test_auc = split_auc(&model, test_features);
        history.push(MilEpochMetrics {
            epoch,
            train_loss: epoch_loss / batches.max(1.0),
            train_auc,
            test_auc,
        });
        log::debug!("mil epoch {epoch}: loss {:.4} train auc {train_auc:.4} test auc {test_auc:.4}", epoch_loss / batches.max(1.0));

        if test_auc > best_test_auc {
            best_test_auc = test_auc;
            best_epoch = epoch;
            best_state = Some(model.collect_state());
        }
    }

    if let Some(state) = best_state {
        model.apply_state(state)?;
    }
    Ok(TrainedMil { model, history, best_epoch, best_test_auc })
}

/// Eval-mode traces for a feature split.
pub fn predict_traces(model: &MilModel, features: &[BagFeatures]) -> Vec<PredictionTrace> {
    features.iter().map(|f| model.patient_forward(f)).collect()
}

fn split_auc(model: &MilModel, features: &[BagFeatures]) -> f64 {
    let traces = predict_traces(model, features);
    let labels: Vec<u8> = traces.iter().map(|t| t.label).collect();
    let probs: Vec<f64> = traces.iter().map(|t| t.final_prob).collect();
    roc_auc(&labels, &probs).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphometry::FEATURE_COUNT;
    use crate::rng::component_rng;
    use ndarray::Array2;
    use rand::Rng as _;

    /// Features where the first latent coordinate of any node determines the
    /// label: an easy, learnable MIL problem.
    fn separable_features(n: usize, seed: u64) -> Vec<BagFeatures> {
        let mut rng = component_rng(seed, "mil-train-fake");
        (0..n)
            .map(|i| {
                let label = f64::from(i % 2 == 0);
                let n_nodes = rng.random_range(1..5);
                let hot = rng.random_range(0..n_nodes);
                let latents = Array2::from_shape_fn((n_nodes, 4), |(k, j)| {
                    let base: f64 = rng.random::<f64>() * 0.1;
                    if j == 0 && k == hot && label > 0.5 {
                        base + 1.0
                    } else {
                        base
                    }
                });
                BagFeatures {
                    patient_id: format!("f{i}"),
                    label,
                    latents,
                    node_features: Array2::from_shape_simple_fn((n_nodes, FEATURE_COUNT), || rng.random::<f64>() * 0.2),
                    clinical: [0.5, 1.0, 0.0, 1.0, 0.0, 0.0],
                    largest_node_features: [0.3; FEATURE_COUNT],
                    is_synthetic: false,
                    parent_id: None,
                }
            })
            .collect()
    }

    fn tiny_config() -> MilConfig {
        MilConfig {
            patch_hidden_dim: 32,
            patient_hidden_dim: 16,
            max_patches: 6,
            max_epochs: 12,
            batch_size: 16,
            learning_rate: 5e-3,
            weight_decay: 1e-3,
            synthetic_patients: 0,
            seed: 7,
            ..MilConfig::default()
        }
    }

    #[test]
    fn learns_a_separable_problem_above_chance() {
        let train = separable_features(48, 1);
        let test = separable_features(24, 2);
        let trained = train_classifier(&train, &test, &tiny_config(), &AblationSpec::default(), 4).unwrap();
        let last = trained.history.last().unwrap();
        assert!(last.train_auc > 0.5, "train auc {} should beat chance", last.train_auc);
        let first = trained.history.first().unwrap();
        assert!(
            trained.history.iter().map(|m| m.train_loss).fold(f64::INFINITY, f64::min) < first.train_loss,
            "loss should decrease over training"
        );
    }

    #[test]
    fn single_class_training_set_aborts() {
        let mut train = separable_features(10, 3);
        for f in &mut train {
            f.label = 0.0;
        }
        let test = separable_features(4, 4);
        let err = train_classifier(&train, &test, &tiny_config(), &AblationSpec::default(), 4);
        assert!(matches!(err, Err(LnmError::Validation(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let train = separable_features(20, 5);
        let test = separable_features(10, 6);
        let config = MilConfig { max_epochs: 3, ..tiny_config() };
        let a = train_classifier(&train, &test, &config, &AblationSpec::default(), 4).unwrap();
        let b = train_classifier(&train, &test, &config, &AblationSpec::default(), 4).unwrap();
        for (x, y) in a.history.iter().zip(b.history.iter()) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.test_auc.to_bits(), y.test_auc.to_bits());
        }
    }
}
