//! Nested five-fold cross-validation with per-fold candidate selection:
//! best-of-N VAE by test SSIM, then best-of-M classifier by test AUC.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PatientBag};
use crate::error::{LnmError, Result};
use crate::mil::{AblationSpec, MilConfig};
use crate::preprocess::AugmentationConfig;
use crate::rng::{derive_seed, Rng};
use crate::vae::{AnnealSchedule, LossWeights, VaeConfig};

use super::metrics::{aggregate_reports, MetricAggregate, MetricReport};
use super::pipeline::{fit_classifier, fit_encoder};
use super::search::SearchSpace;

/// Fold assignments plus per-fold candidate budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub k: usize,
    /// Test patient ids per fold; the folds partition the cohort.
    pub test_folds: Vec<Vec<String>>,
    pub vae_candidates: usize,
    pub mlp_candidates: usize,
}

impl CvPlan {
    /// Stratified plan: positives and negatives are dealt round-robin into
    /// `k` folds after a seeded shuffle.
    pub fn stratified(bags: &[&PatientBag], k: usize, vae_candidates: usize, mlp_candidates: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(LnmError::Config(format!("cross-validation needs k >= 2, got {k}")));
        }
        if vae_candidates == 0 || mlp_candidates == 0 {
            return Err(LnmError::Config("candidate budgets must be positive".into()));
        }
        let mut pos: Vec<&str> = bags.iter().filter(|b| b.label == 1).map(|b| b.patient_id.as_str()).collect();
        let mut neg: Vec<&str> = bags.iter().filter(|b| b.label == 0).map(|b| b.patient_id.as_str()).collect();
        if pos.len() < k {
            return Err(LnmError::Config(format!(
                "stratification error: {} positive patients cannot cover {k} folds",
                pos.len()
            )));
        }
        let mut rng = Rng::seed_from_u64(derive_seed(seed, "cv-folds"));
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut test_folds: Vec<Vec<String>> = vec![Vec::new(); k];
        for (i, id) in pos.iter().chain(neg.iter()).enumerate() {
            test_folds[i % k].push((*id).to_string());
        }
        for fold in &mut test_folds {
            fold.sort();
        }
        Ok(CvPlan { k, test_folds, vae_candidates, mlp_candidates })
    }

    /// Every patient in exactly one test fold.
    pub fn validate_partition(&self, all_ids: &[String]) -> Result<()> {
        use std::collections::BTreeSet;
        let mut seen = BTreeSet::new();
        for (f, fold) in self.test_folds.iter().enumerate() {
            for id in fold {
                if !seen.insert(id.as_str()) {
                    return Err(LnmError::Validation(format!("patient {id} appears in two test folds")));
                }
                if !all_ids.contains(id) {
                    return Err(LnmError::Validation(format!("fold {f} mentions unknown patient {id}")));
                }
            }
        }
        if seen.len() != all_ids.len() {
            return Err(LnmError::Validation(format!(
                "folds cover {} patients, cohort has {}",
                seen.len(),
                all_ids.len()
            )));
        }
        Ok(())
    }

    pub fn test_ids(&self, fold: usize) -> &[String] {
        &self.test_folds[fold]
    }

    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        self.test_folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, ids)| ids.iter().cloned())
            .collect()
    }
}

/// Everything except the searched fields; candidates are drawn around these.
#[derive(Debug, Clone)]
pub struct CvTemplates {
    pub vae: VaeConfig,
    pub weights: LossWeights,
    pub schedule: AnnealSchedule,
    pub mil: MilConfig,
    pub spec: AblationSpec,
    pub augmentation: AugmentationConfig,
    pub augment_vae_training: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub report: MetricReport,
    pub best_vae_test_ssim: f64,
    pub best_mlp_test_auc: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<FoldOutcome>,
    pub mean: MetricAggregate,
    pub sd: MetricAggregate,
}

/// Run the nested cross-validation. Within each fold, `vae_candidates`
/// encoder draws are trained and the best test-SSIM one is kept, then
/// `mlp_candidates` classifier draws are trained and the best test-AUC one
/// produces the fold report.
pub fn run_nested_cv(
    corpus: &Corpus,
    plan: &CvPlan,
    space: &SearchSpace,
    templates: &CvTemplates,
    seed: u64,
) -> Result<CvSummary> {
    space.validate()?;
    let all_ids: Vec<String> = corpus.bags.iter().map(|b| b.patient_id.clone()).collect();
    plan.validate_partition(&all_ids)?;

    let mut outcomes = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let test_ids = plan.test_ids(fold);
        let train_ids = plan.train_ids(fold);
        let train_bags: Vec<&PatientBag> = corpus.bags.iter().filter(|b| train_ids.contains(&b.patient_id)).collect();
        let test_bags: Vec<&PatientBag> = corpus.bags.iter().filter(|b| test_ids.contains(&b.patient_id)).collect();
        if !test_bags.iter().any(|b| b.label == 1) {
            return Err(LnmError::Config(format!("stratification error: fold {fold} has no positive patients")));
        }

        let mut rng = Rng::seed_from_u64(derive_seed(seed, &format!("cv-fold-{fold}")));
        let aug = templates.augment_vae_training.then_some(&templates.augmentation);

        // Stage one: best-of-N encoder by test SSIM.
        let mut best_stage_one = None;
        for candidate in 0..plan.vae_candidates {
            let config = space.sample_vae(&templates.vae, &mut rng);
            let weights = LossWeights {
                gamma: 3.0 * config.batch_size as f64,
                ..templates.weights
            };
            log::info!("fold {fold}: training encoder candidate {candidate} (base {})", config.base);
            let stage = fit_encoder(&train_bags, &test_bags, &corpus.manifest.spacing, &config, &weights, &templates.schedule, aug)?;
            let better = best_stage_one
                .as_ref()
                .map_or(true, |(best, _): &(f64, _)| stage.trained.best_test_ssim > *best);
            if better {
                best_stage_one = Some((stage.trained.best_test_ssim, stage));
            }
        }
        let (best_ssim, stage_one) = best_stage_one.expect("at least one encoder candidate");

        // Stage two: best-of-M classifier by test AUC.
        let mut best_stage_two = None;
        for candidate in 0..plan.mlp_candidates {
            let config = space.sample_mil(&templates.mil, &mut rng);
            log::info!("fold {fold}: training classifier candidate {candidate}");
            let stage = fit_classifier(
                &train_bags,
                &test_bags,
                &stage_one.trained.model,
                &stage_one.scaler,
                &corpus.manifest.spacing,
                &config,
                &templates.spec,
                &templates.augmentation,
            )?;
            let better = best_stage_two
                .as_ref()
                .map_or(true, |(best, _): &(f64, _)| stage.trained.best_test_auc > *best);
            if better {
                best_stage_two = Some((stage.trained.best_test_auc, stage));
            }
        }
        let (best_auc, stage_two) = best_stage_two.expect("at least one classifier candidate");

        outcomes.push(FoldOutcome {
            fold,
            report: stage_two.report,
            best_vae_test_ssim: best_ssim,
            best_mlp_test_auc: best_auc,
            n_train: train_bags.len(),
            n_test: test_bags.len(),
        });
    }

    let reports: Vec<MetricReport> = outcomes.iter().map(|o| o.report).collect();
    let (mean, sd) = aggregate_reports(&reports)?;
    Ok(CvSummary { folds: outcomes, mean, sd })
}
