//! VAE training loop: AdamW with gradient accumulation, per-epoch metric
//! logging, early stopping on the test SSIM and best-checkpoint retention.

use ndarray::{s, Array2, Array4};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use super::loss::{anneal, vae_loss_with_grad, AnnealSchedule, LossWeights};
use super::metrics::reconstruction_report;
use super::model::{image_batch, ConvVae, VaeConfig};
use crate::corpus::PatchRecord;
use crate::error::{LnmError, Result};
use crate::nn::{scale_grads, zero_grads, AdamW};
use crate::preprocess::{augment, AugmentationConfig};
use crate::rng::{derive_seed, Rng};

/// One row of the per-epoch metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub anneal_factor: f64,
    pub train_loss: f64,
    pub train_l1: f64,
    pub train_ssim: f64,
    pub train_kld: f64,
    pub test_l1: f64,
    pub test_ssim: f64,
    pub test_kld: f64,
}

pub struct TrainedVae {
    pub model: ConvVae,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_test_ssim: f64,
    pub stopped_early: bool,
}

/// Train on the given patches; the best-test-SSIM parameters are restored
/// into the returned model.
pub fn train_vae(
    train_patches: &[PatchRecord],
    test_patches: &[PatchRecord],
    config: &VaeConfig,
    weights: &LossWeights,
    schedule: &AnnealSchedule,
    augmentation: Option<&AugmentationConfig>,
) -> Result<TrainedVae> {
    config.validate()?;
    weights.validate()?;
    if train_patches.is_empty() {
        return Err(LnmError::Validation("training split is empty".into()));
    }
    if test_patches.is_empty() {
        return Err(LnmError::Validation("test split is empty".into()));
    }

    let mut model = ConvVae::new(config)?;
    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut shuffle_rng = Rng::seed_from_u64(derive_seed(config.seed, "vae-shuffle"));
    let mut eps_rng = Rng::seed_from_u64(derive_seed(config.seed, "vae-eps"));
    let mut aug_rng = Rng::seed_from_u64(derive_seed(config.seed, "vae-augment"));

    let test_images: Vec<Array2<f64>> = test_patches.iter().map(|p| p.image.clone()).collect();
    let test_stack = image_batch(&test_images);

    let mut history = Vec::new();
    let mut best_test_ssim = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_state: Option<Vec<ndarray::ArrayD<f64>>> = None;
    let mut stale_epochs = 0;
    let mut stopped_early = false;
    const MIN_DELTA: f64 = 1e-4;

    let mut indices: Vec<usize> = (0..train_patches.len()).collect();
    for epoch in 0..config.max_epochs {
        let a_t = anneal(epoch, schedule, weights.annealing);
        indices.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_l1 = 0.0;
        let mut epoch_ssim = 0.0;
        let mut epoch_kld = 0.0;
        let mut batches = 0.0f64;
        let micro_batches: Vec<&[usize]> = indices.chunks(config.batch_size).collect();
        for group in micro_batches.chunks(config.accumulation_steps) {
            zero_grads(&mut model.params());
            for batch_idx in group {
                let batch = assemble_batch(train_patches, batch_idx, augmentation, &mut aug_rng)?;
                let fwd = model.forward_train(&batch, &mut eps_rng)?;
                let (components, dxhat, dmu, dlogvar) =
                    vae_loss_with_grad(&batch, &fwd.reconstruction, &fwd.mu, &fwd.logvar, weights, a_t);
                components.check_finite(&format!("epoch {epoch}"))?;
                model.backward(&fwd, &dxhat, &dmu, &dlogvar);
                epoch_loss += components.total;
                epoch_l1 += components.l1;
                epoch_ssim += components.ssim;
                epoch_kld += components.kld;
                batches += 1.0;
            }
            scale_grads(&mut model.params(), 1.0 / group.len() as f64);
            optimizer.step(&mut model.params());
        }

        // Train metrics are batch averages from the training passes; only
        // the test split gets a dedicated eval pass each epoch.
        let test_report = reconstruction_report(&model, &test_stack)?;
        let denom = batches.max(1.0);
        let metrics = EpochMetrics {
            epoch,
            anneal_factor: a_t,
            train_loss: epoch_loss / denom,
            train_l1: epoch_l1 / denom,
            train_ssim: epoch_ssim / denom,
            train_kld: epoch_kld / denom,
            test_l1: test_report.mae,
            test_ssim: test_report.ssim,
            test_kld: test_report.kld,
        };
        if !metrics.test_ssim.is_finite() {
            return Err(LnmError::Numerical(format!(
                "loss diverged at epoch {epoch}: component test_ssim = {}",
                metrics.test_ssim
            )));
        }
        history.push(metrics);
        log::debug!(
            "epoch {epoch}: loss {:.4} train ssim {:.4} test ssim {:.4}",
            metrics.train_loss,
            metrics.train_ssim,
            metrics.test_ssim
        );

        if metrics.test_ssim > best_test_ssim + MIN_DELTA {
            best_test_ssim = metrics.test_ssim;
            best_epoch = epoch;
            best_state = Some(model.collect_state());
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    if let Some(state) = best_state {
        model.apply_state(state)?;
    }
    Ok(TrainedVae { model, history, best_epoch, best_test_ssim, stopped_early })
}

fn assemble_batch(
    patches: &[PatchRecord],
    indices: &[usize],
    augmentation: Option<&AugmentationConfig>,
    rng: &mut Rng,
) -> Result<Array4<f64>> {
    let size = patches[0].image.dim().0;
    let mut batch = Array4::<f64>::zeros((indices.len(), 1, size, size));
    for (slot, &idx) in indices.iter().enumerate() {
        let image = match augmentation {
            Some(cfg) => augment(&patches[idx], cfg, rng)?.image,
            None => patches[idx].image.clone(),
        };
        batch.slice_mut(s![slot, 0, .., ..]).assign(&image);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_phantom_corpus, PhantomSpec};

    fn tiny_patches(seed: u64, n_patients: usize) -> Vec<PatchRecord> {
        let corpus = generate_phantom_corpus(&PhantomSpec { n_patients, seed, ..PhantomSpec::default() }).unwrap();
        corpus.bags.iter().flat_map(|b| b.patches.iter().cloned()).collect()
    }

    fn tiny_config(max_epochs: usize) -> VaeConfig {
        VaeConfig {
            base: 4,
            latent_scalar: 4,
            batch_size: 16,
            accumulation_steps: 1,
            learning_rate: 2e-3,
            weight_decay: 1e-4,
            max_epochs,
            patience: 50,
            seed: 3,
            ..VaeConfig::default()
        }
    }

    #[test]
    fn reconstruction_improves_on_small_run() {
        let patches = tiny_patches(31, 8);
        let (train, test) = patches.split_at(patches.len() * 3 / 4);
        let weights = LossWeights { alpha: 0.5, lambda: 100.0, gamma: 10.0, beta: 0.01, annealing: true };
        let schedule = AnnealSchedule { total_epochs: 6, rate: 5.0 };
        let trained = train_vae(train, test, &tiny_config(6), &weights, &schedule, None).unwrap();
        assert_eq!(trained.history.len(), 6);
        let first = trained.history.first().unwrap();
        let last = trained.history.last().unwrap();
        assert!(
            last.train_ssim > first.train_ssim,
            "train ssim should improve: {} -> {}",
            first.train_ssim,
            last.train_ssim
        );
        assert!(last.train_l1 < first.train_l1, "train l1 should drop");
    }

    #[test]
    fn early_stopping_halts_before_max_epochs() {
        let patches = tiny_patches(32, 4);
        let (train, test) = patches.split_at(patches.len() / 2);
        // Near-zero learning rate: the test SSIM stalls almost immediately
        // (only running-statistic drift remains), so patience must trigger.
        let config = VaeConfig { learning_rate: 1e-12, patience: 3, max_epochs: 60, ..tiny_config(60) };
        let weights = LossWeights { alpha: 0.5, lambda: 100.0, gamma: 10.0, beta: 0.01, annealing: false };
        let trained = train_vae(train, test, &config, &weights, &AnnealSchedule::default(), None).unwrap();
        assert!(trained.stopped_early);
        assert!(trained.history.len() < 60);
    }

    #[test]
    fn divergence_aborts_with_epoch_diagnostic() {
        let patches = tiny_patches(33, 4);
        let (train, test) = patches.split_at(patches.len() / 2);
        let config = VaeConfig { learning_rate: 1e12, max_epochs: 8, ..tiny_config(8) };
        let weights = LossWeights { alpha: 0.5, lambda: 4000.0, gamma: 48.0, beta: 1.0, annealing: false };
        let err = match train_vae(train, test, &config, &weights, &AnnealSchedule::default(), None) {
            Err(e) => e,
            Ok(_) => panic!("expected divergence"),
        };
        match err {
            LnmError::Numerical(msg) => assert!(msg.contains("epoch"), "diagnostic should name the epoch: {msg}"),
            other => panic!("expected numerical failure, got {other}"),
        }
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let patches = tiny_patches(34, 4);
        let (train, test) = patches.split_at(patches.len() / 2);
        let weights = LossWeights { alpha: 0.5, lambda: 100.0, gamma: 10.0, beta: 0.01, annealing: true };
        let schedule = AnnealSchedule { total_epochs: 3, rate: 5.0 };
        let a = train_vae(train, test, &tiny_config(3), &weights, &schedule, None).unwrap();
        let b = train_vae(train, test, &tiny_config(3), &weights, &schedule, None).unwrap();
        for (ma, mb) in a.history.iter().zip(b.history.iter()) {
            assert_eq!(ma.train_loss.to_bits(), mb.train_loss.to_bits());
            assert_eq!(ma.test_ssim.to_bits(), mb.test_ssim.to_bits());
        }
    }
}
