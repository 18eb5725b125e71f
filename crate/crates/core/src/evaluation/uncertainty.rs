//! Prediction accumulation across saved model states.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{LnmError, Result};
use crate::mil::PredictionTrace;

/// Mean-confidence band treated as uncertain.
pub const UNCERTAIN_BAND: (f64, f64) = (0.33, 0.66);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientUncertainty {
    pub patient_id: String,
    pub label: u8,
    pub probs: Vec<f64>,
    pub mean_confidence: f64,
    pub n_misclassified: usize,
    pub n_states: usize,
    /// Misclassified in strictly more than half of the saved states.
    pub difficult: bool,
    /// Mean confidence inside [`UNCERTAIN_BAND`].
    pub uncertain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyLedger {
    pub patients: Vec<PatientUncertainty>,
    pub n_states: usize,
}

impl UncertaintyLedger {
    pub fn difficult_count(&self) -> usize {
        self.patients.iter().filter(|p| p.difficult).count()
    }

    pub fn uncertain_count(&self) -> usize {
        self.patients.iter().filter(|p| p.uncertain).count()
    }
}

/// Accumulate traces from two or more saved model states over the same
/// patient set.
pub fn accumulate_uncertainty(states: &[Vec<PredictionTrace>], threshold: f64) -> Result<UncertaintyLedger> {
    if states.len() < 2 {
        return Err(LnmError::Validation(format!(
            "uncertainty accumulation requires at least 2 model states, got {}",
            states.len()
        )));
    }
    let mut per_patient: BTreeMap<String, (u8, Vec<f64>)> = BTreeMap::new();
    for trace in &states[0] {
        per_patient.insert(trace.patient_id.clone(), (trace.label, Vec::with_capacity(states.len())));
    }
    for state in states {
        if state.len() != per_patient.len() {
            return Err(LnmError::Validation(
                "every model state must cover the same patient set".into(),
            ));
        }
        for trace in state {
            let entry = per_patient.get_mut(&trace.patient_id).ok_or_else(|| {
                LnmError::Validation(format!("patient {} missing from an earlier state", trace.patient_id))
            })?;
            entry.1.push(trace.final_prob);
        }
    }

    let n_states = states.len();
    let patients = per_patient
        .into_iter()
        .map(|(patient_id, (label, probs))| {
            let mean = probs.iter().sum::<f64>() / probs.len() as f64;
            let n_mis = probs
                .iter()
                .filter(|&&p| u8::from(p >= threshold) != label)
                .count();
            PatientUncertainty {
                patient_id,
                label,
                mean_confidence: mean,
                difficult: 2 * n_mis > n_states,
                uncertain: (UNCERTAIN_BAND.0..=UNCERTAIN_BAND.1).contains(&mean),
                n_misclassified: n_mis,
                n_states,
                probs,
            }
        })
        .collect();
    Ok(UncertaintyLedger { patients, n_states })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(id: &str, label: u8, prob: f64) -> PredictionTrace {
        PredictionTrace {
            patient_id: id.to_string(),
            label,
            node_probs: vec![],
            patient_mlp_prob: prob,
            max_node_prob: prob,
            final_prob: prob,
            decision: u8::from(prob >= 0.436),
            fallback: false,
        }
    }

    #[test]
    fn misclassified_positive_is_difficult_but_not_uncertain() {
        let states = vec![vec![trace("a", 1, 0.2)], vec![trace("a", 1, 0.3)]];
        let ledger = accumulate_uncertainty(&states, 0.436).unwrap();
        let p = &ledger.patients[0];
        assert_eq!(p.mean_confidence, 0.25);
        assert_eq!(p.n_misclassified, 2);
        assert!(p.difficult);
        assert!(!p.uncertain);
    }

    #[test]
    fn mean_in_band_is_uncertain() {
        let states = vec![vec![trace("a", 0, 0.45)], vec![trace("a", 0, 0.55)]];
        let ledger = accumulate_uncertainty(&states, 0.436).unwrap();
        assert!(ledger.patients[0].uncertain);
    }

    #[test]
    fn exactly_half_misclassified_is_not_difficult() {
        let states = vec![
            vec![trace("a", 1, 0.9)],
            vec![trace("a", 1, 0.1)],
            vec![trace("a", 1, 0.9)],
            vec![trace("a", 1, 0.1)],
        ];
        let ledger = accumulate_uncertainty(&states, 0.436).unwrap();
        assert_eq!(ledger.patients[0].n_misclassified, 2);
        assert!(!ledger.patients[0].difficult, "strictly more than half is required");
    }

    #[test]
    fn fewer_than_two_states_rejected() {
        let states = vec![vec![trace("a", 1, 0.9)]];
        assert!(matches!(accumulate_uncertainty(&states, 0.436), Err(LnmError::Validation(_))));
        assert!(matches!(accumulate_uncertainty(&[], 0.436), Err(LnmError::Validation(_))));
    }

    #[test]
    fn mismatched_patient_sets_rejected() {
        let states = vec![vec![trace("a", 1, 0.9)], vec![trace("b", 1, 0.9)]];
        assert!(accumulate_uncertainty(&states, 0.436).is_err());
    }
}
