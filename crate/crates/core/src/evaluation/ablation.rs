//! Ablation switchboard: retrain the classifier with one component switched
//! off at a time against a shared frozen encoder.

use serde::{Deserialize, Serialize};

use crate::corpus::{PatientBag, VoxelSpacing};
use crate::error::Result;
use crate::mil::{AblationSpec, Aggregation, MilConfig};
use crate::morphometry::FeatureScaler;
use crate::preprocess::AugmentationConfig;
use crate::vae::ConvVae;

use super::metrics::MetricReport;
use super::pipeline::fit_classifier;

/// The ablation grid mirroring the reported comparison rows.
pub fn standard_ablation_specs() -> Vec<(String, AblationSpec)> {
    let full = AblationSpec::default();
    vec![
        ("full".into(), full),
        (
            "deep-only".into(),
            AblationSpec { use_clinical_node: false, use_clinical_patient: false, ..full },
        ),
        ("no-node-morphometry".into(), AblationSpec { use_clinical_node: false, ..full }),
        ("no-patient-clinical".into(), AblationSpec { use_clinical_patient: false, ..full }),
        ("max-only".into(), AblationSpec { aggregation: Aggregation::MaxOnly, ..full }),
        ("mlp-only".into(), AblationSpec { aggregation: Aggregation::MlpOnly, ..full }),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub spec: AblationSpec,
    pub report: MetricReport,
    pub best_test_auc: f64,
}

/// Train one classifier per spec against the shared encoder and score each.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    train_bags: &[&PatientBag],
    test_bags: &[&PatientBag],
    encoder: &ConvVae,
    scaler: &FeatureScaler,
    spacing: &VoxelSpacing,
    config: &MilConfig,
    specs: &[(String, AblationSpec)],
    augmentation: &AugmentationConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(specs.len());
    for (name, spec) in specs {
        spec.validate()?;
        log::info!("ablation row {name}");
        let stage = fit_classifier(train_bags, test_bags, encoder, scaler, spacing, config, spec, augmentation)?;
        rows.push(AblationRow {
            name: name.clone(),
            spec: *spec,
            report: stage.report,
            best_test_auc: stage.trained.best_test_auc,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_contains_the_switch_rows() {
        let specs = standard_ablation_specs();
        assert!(specs.iter().any(|(n, s)| n == "max-only" && s.aggregation == Aggregation::MaxOnly));
        assert!(specs.iter().any(|(n, s)| n == "mlp-only" && s.aggregation == Aggregation::MlpOnly));
        assert!(specs.iter().any(|(n, s)| n == "deep-only" && !s.use_clinical_node && !s.use_clinical_patient));
        for (_, spec) in specs {
            spec.validate().unwrap();
        }
    }
}
