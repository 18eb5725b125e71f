//! Experiment configuration: one JSON file drives the whole pipeline.
//!
//! A single global seed fans out to per-component seeds through
//! [`crate::rng::derive_seed`] (hash of component name + global seed), so a
//! config file plus the code version reproduces a run and each component is
//! independently reproducible. Seed fields inside the component configs are
//! overwritten by this derivation when the file is resolved.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::PhantomSpec;
use crate::error::{LnmError, Result};
use crate::evaluation::SearchSpace;
use crate::insight::SaliencyTarget;
use crate::mil::{AblationSpec, MilConfig};
use crate::preprocess::AugmentationConfig;
use crate::rng::derive_seed;
use crate::vae::{AnnealSchedule, LossWeights, VaeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSettings {
    pub k: usize,
    pub vae_candidates: usize,
    pub mlp_candidates: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings { k: 5, vae_candidates: 5, mlp_candidates: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsightSettings {
    pub k_range: (usize, usize),
    pub kmeans_restarts: usize,
    pub kmeans_max_iterations: usize,
    pub small_percentile: f64,
    pub large_percentile: f64,
    pub traversal_multiples: Vec<f64>,
    pub saliency_target: SaliencyTarget,
}

impl Default for InsightSettings {
    fn default() -> Self {
        InsightSettings {
            k_range: (8, 40),
            kmeans_restarts: 10,
            kmeans_max_iterations: 100,
            small_percentile: 25.0,
            large_percentile: 75.0,
            traversal_multiples: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            saliency_target: SaliencyTarget::MuNorm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; every component seed is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub phantom: PhantomSpec,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    /// Re-augment VAE training batches every epoch.
    #[serde(default)]
    pub augment_vae_training: bool,
    #[serde(default)]
    pub vae: VaeConfig,
    #[serde(default = "default_weights")]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub anneal: AnnealSchedule,
    #[serde(default)]
    pub mil: MilConfig,
    #[serde(default)]
    pub ablation: AblationSpec,
    #[serde(default)]
    pub cv: CvSettings,
    #[serde(default)]
    pub search_space: SearchSpace,
    #[serde(default)]
    pub insight: InsightSettings,
}

fn default_weights() -> LossWeights {
    LossWeights::reference_defaults(VaeConfig::default().batch_size)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LnmError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| LnmError::Config(format!("invalid config {}: {e}", path.display())))?;
        config.resolve_seeds();
        config.validate()?;
        Ok(config)
    }

    /// Overwrite component seeds with the documented fanout from the global
    /// seed.
    pub fn resolve_seeds(&mut self) {
        self.phantom.seed = derive_seed(self.seed, "corpus");
        self.vae.seed = derive_seed(self.seed, "vae");
        self.mil.seed = derive_seed(self.seed, "mil");
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.augmentation.validate()?;
        self.vae.validate()?;
        self.loss_weights.validate()?;
        self.mil.validate()?;
        self.ablation.validate()?;
        self.search_space.validate()?;
        if self.cv.k < 2 || self.cv.vae_candidates == 0 || self.cv.mlp_candidates == 0 {
            return Err(LnmError::Config("cv settings need k >= 2 and positive candidate budgets".into()));
        }
        if self.insight.k_range.0 == 0 || self.insight.k_range.0 > self.insight.k_range.1 {
            return Err(LnmError::Config(format!("insight.k_range {:?} is invalid", self.insight.k_range)));
        }
        if self.insight.small_percentile >= self.insight.large_percentile {
            return Err(LnmError::Config("insight percentiles must satisfy small < large".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips() {
        let mut config = ExperimentConfig { seed: 11, ..ExperimentConfig::default() };
        config.resolve_seeds();
        config.validate().unwrap();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let parsed: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config, parsed);
    }

    #[test]
    fn unknown_field_is_named_in_the_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{ "seed": 1, "not_a_field": true }"#).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("not_a_field"), "error should name the field: {err}");
    }

    #[test]
    fn seed_fanout_differs_per_component() {
        let mut config = ExperimentConfig { seed: 5, ..ExperimentConfig::default() };
        config.resolve_seeds();
        assert_ne!(config.vae.seed, config.mil.seed);
        assert_ne!(config.vae.seed, config.phantom.seed);
        // deterministic
        let mut again = ExperimentConfig { seed: 5, ..ExperimentConfig::default() };
        again.resolve_seeds();
        assert_eq!(config.vae.seed, again.vae.seed);
    }
}
