//! Seeded random hyperparameter search with a persisted, ranked ledger.

use rand::Rng as _;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{LnmError, Result};
use crate::mil::MilConfig;
use crate::rng::{derive_seed, Rng};
use crate::vae::VaeConfig;

/// Parameter ranges explored by the search; inclusive bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub vae_base: (usize, usize),
    pub vae_latent_scalar: (usize, usize),
    pub vae_learning_rate: (f64, f64),
    pub vae_weight_decay: (f64, f64),
    pub vae_accumulation_steps: (usize, usize),
    pub mlp_learning_rate: (f64, f64),
    pub mlp_weight_decay: (f64, f64),
    pub mlp_patch_hidden: (usize, usize),
    pub mlp_patient_hidden: (usize, usize),
    pub mlp_patch_dropout: (f64, f64),
    pub mlp_patient_dropout: (f64, f64),
    pub eta: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            vae_base: (16, 28),
            vae_latent_scalar: (16, 28),
            vae_learning_rate: (1e-4, 3e-3),
            vae_weight_decay: (1e-3, 0.1),
            vae_accumulation_steps: (1, 3),
            mlp_learning_rate: (1e-3, 2e-2),
            mlp_weight_decay: (1e-3, 0.2),
            mlp_patch_hidden: (256, 2048),
            mlp_patient_hidden: (32, 128),
            mlp_patch_dropout: (0.2, 0.5),
            mlp_patient_dropout: (0.1, 0.4),
            eta: (0.5, 0.75),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        fn ordered_u(name: &str, r: (usize, usize)) -> Result<()> {
            if r.0 == 0 || r.0 > r.1 {
                return Err(LnmError::Config(format!("search range {name} = {r:?} is empty or invalid")));
            }
            Ok(())
        }
        fn ordered_f(name: &str, r: (f64, f64)) -> Result<()> {
            if !(r.0.is_finite() && r.1.is_finite()) || r.0 > r.1 {
                return Err(LnmError::Config(format!("search range {name} = {r:?} is empty or invalid")));
            }
            Ok(())
        }
        ordered_u("vae_base", self.vae_base)?;
        ordered_u("vae_latent_scalar", self.vae_latent_scalar)?;
        ordered_u("vae_accumulation_steps", self.vae_accumulation_steps)?;
        ordered_u("mlp_patch_hidden", self.mlp_patch_hidden)?;
        ordered_u("mlp_patient_hidden", self.mlp_patient_hidden)?;
        ordered_f("vae_learning_rate", self.vae_learning_rate)?;
        ordered_f("vae_weight_decay", self.vae_weight_decay)?;
        ordered_f("mlp_learning_rate", self.mlp_learning_rate)?;
        ordered_f("mlp_weight_decay", self.mlp_weight_decay)?;
        ordered_f("mlp_patch_dropout", self.mlp_patch_dropout)?;
        ordered_f("mlp_patient_dropout", self.mlp_patient_dropout)?;
        ordered_f("eta", self.eta)?;
        Ok(())
    }

    /// Draw a VAE configuration; fields not in the space come from `template`.
    pub fn sample_vae(&self, template: &VaeConfig, rng: &mut Rng) -> VaeConfig {
        VaeConfig {
            base: sample_usize(rng, self.vae_base),
            latent_scalar: sample_usize(rng, self.vae_latent_scalar),
            learning_rate: sample_log(rng, self.vae_learning_rate),
            weight_decay: sample_log(rng, self.vae_weight_decay),
            accumulation_steps: sample_usize(rng, self.vae_accumulation_steps),
            seed: rng.random(),
            ..template.clone()
        }
    }

    /// Draw a classifier configuration; fields not in the space come from
    /// `template`.
    pub fn sample_mil(&self, template: &MilConfig, rng: &mut Rng) -> MilConfig {
        MilConfig {
            learning_rate: sample_log(rng, self.mlp_learning_rate),
            weight_decay: sample_log(rng, self.mlp_weight_decay),
            patch_hidden_dim: sample_usize(rng, self.mlp_patch_hidden),
            patient_hidden_dim: sample_usize(rng, self.mlp_patient_hidden),
            patch_dropout: sample_uniform(rng, self.mlp_patch_dropout),
            patient_dropout: sample_uniform(rng, self.mlp_patient_dropout),
            eta: sample_uniform(rng, self.eta),
            seed: rng.random(),
            ..template.clone()
        }
    }
}

fn sample_usize(rng: &mut Rng, range: (usize, usize)) -> usize {
    rng.random_range(range.0..=range.1)
}

fn sample_uniform(rng: &mut Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        return range.0;
    }
    rng.random_range(range.0..=range.1)
}

fn sample_log(rng: &mut Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        return range.0;
    }
    (rng.random_range(range.0.ln()..=range.1.ln())).exp()
}

/// One evaluated draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRun {
    pub run_index: usize,
    pub objective: f64,
    pub config_json: String,
    pub seed: u64,
}

/// Ranked ledger of every evaluated draw, best objective first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLedger {
    pub objective_name: String,
    pub runs: Vec<SearchRun>,
}

/// Run a seeded random search: `sample` draws a configuration, `evaluate`
/// scores it (higher is better). Failed evaluations are logged and ranked
/// last with objective `-inf`.
pub fn hyperparameter_search<C, S, E>(
    objective_name: &str,
    budget: usize,
    seed: u64,
    mut sample: S,
    mut evaluate: E,
) -> Result<SearchLedger>
where
    C: Serialize,
    S: FnMut(&mut Rng) -> C,
    E: FnMut(&C) -> Result<f64>,
{
    if budget == 0 {
        return Err(LnmError::Config("search budget must be positive".into()));
    }
    let mut rng = Rng::seed_from_u64(derive_seed(seed, "hyperparameter-search"));
    let mut runs = Vec::with_capacity(budget);
    for run_index in 0..budget {
        let run_seed: u64 = rng.random();
        let mut run_rng = Rng::seed_from_u64(run_seed);
        let config = sample(&mut run_rng);
        let config_json = serde_json::to_string(&config)?;
        let objective = match evaluate(&config) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("search run {run_index} failed: {e}");
                f64::NEG_INFINITY
            }
        };
        runs.push(SearchRun { run_index, objective, config_json, seed: run_seed });
    }
    runs.sort_by(|a, b| b.objective.total_cmp(&a.objective).then(a.run_index.cmp(&b.run_index)));
    Ok(SearchLedger { objective_name: objective_name.to_string(), runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_one_yields_single_ranked_run() {
        let ledger = hyperparameter_search(
            "toy",
            1,
            42,
            |rng| rng.random::<f64>(),
            |c| Ok(*c),
        )
        .unwrap();
        assert_eq!(ledger.runs.len(), 1);
        assert_eq!(ledger.runs[0].run_index, 0);
    }

    #[test]
    fn rankings_are_stable_under_rerun() {
        let run = || {
            hyperparameter_search("toy", 8, 7, |rng| rng.random::<f64>(), |c| Ok(*c)).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        for w in a.runs.windows(2) {
            assert!(w[0].objective >= w[1].objective);
        }
    }

    #[test]
    fn zero_budget_rejected() {
        let err = hyperparameter_search("toy", 0, 1, |rng| rng.random::<f64>(), |c| Ok(*c));
        assert!(matches!(err, Err(LnmError::Config(_))));
    }

    #[test]
    fn degenerate_space_returns_the_single_point() {
        let space = SearchSpace {
            vae_base: (4, 4),
            vae_latent_scalar: (4, 4),
            vae_learning_rate: (1e-3, 1e-3),
            vae_weight_decay: (0.01, 0.01),
            vae_accumulation_steps: (1, 1),
            ..SearchSpace::default()
        };
        space.validate().unwrap();
        let template = VaeConfig::default();
        let mut rng = Rng::seed_from_u64(1);
        let sampled = space.sample_vae(&template, &mut rng);
        assert_eq!(sampled.base, 4);
        assert_eq!(sampled.latent_scalar, 4);
        assert_eq!(sampled.learning_rate, 1e-3);
        assert_eq!(sampled.accumulation_steps, 1);
    }

    #[test]
    fn invalid_space_rejected() {
        let space = SearchSpace { vae_base: (8, 4), ..SearchSpace::default() };
        assert!(matches!(space.validate(), Err(LnmError::Config(_))));
    }
}
