//! Synthetic patients: augmented clones sampled from the training split with
//! positive-class oversampling.

use rand::Rng as _;

use crate::corpus::PatientBag;
use crate::error::{LnmError, Result};
use crate::preprocess::{augment, AugmentationConfig};
use crate::rng::Rng;

/// Create `n` synthetic bags. Parents are drawn from `train_bags` with
/// weight `oversample_ratio` for positive patients and 1 for negative ones;
/// every patch of a clone is re-augmented and the clone records its parent.
pub fn make_synthetic_patients(
    train_bags: &[PatientBag],
    n: usize,
    oversample_ratio: f64,
    cfg: &AugmentationConfig,
    rng: &mut Rng,
) -> Result<Vec<PatientBag>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if oversample_ratio <= 0.0 {
        return Err(LnmError::Config(format!("oversample_ratio must be positive, got {oversample_ratio}")));
    }
    if !train_bags.iter().any(|b| b.label == 1) {
        return Err(LnmError::Config(
            "cannot synthesize patients: the training split has no positive patients to oversample".into(),
        ));
    }

    let weights: Vec<f64> = train_bags
        .iter()
        .map(|b| if b.label == 1 { oversample_ratio } else { 1.0 })
        .collect();
    let total: f64 = weights.iter().sum();

    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut pick = rng.random::<f64>() * total;
        let mut idx = 0;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                idx = i;
                break;
            }
            pick -= w;
        }
        let parent = &train_bags[idx];
        let patient_id = format!("synth{k:03}-{}", parent.patient_id);
        let patches = parent
            .patches
            .iter()
            .map(|p| {
                let mut augmented = augment(p, cfg, rng)?;
                augmented.patient_id = patient_id.clone();
                Ok(augmented)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PatientBag {
            patient_id,
            patches,
            age: parent.age,
            sex: parent.sex,
            t_stage: parent.t_stage,
            label: parent.label,
            is_synthetic: true,
            parent_id: Some(parent.patient_id.clone()),
            nodes: parent.nodes.clone(),
        });
    }
    Ok(out)
}
