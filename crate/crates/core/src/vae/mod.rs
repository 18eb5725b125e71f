//! Variational autoencoder: model, composite loss, training and metrics.

mod checkpoint;
mod loss;
mod metrics;
mod model;
mod ssim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use loss::{anneal, batch_ssim, kld, kld_grad, l1, vae_loss, vae_loss_with_grad, AnnealSchedule, LossComponents, LossWeights};
pub use metrics::{image_metrics, reconstruction_report, ReconstructionReport, PSNR_CAP_DB};
pub use model::{image_batch, reparameterize, reparameterize_with_eps, ConvVae, VaeConfig, VaeForward};
pub use ssim::{ssim, ssim_with_grad, SSIM_WINDOW};
pub use train::{train_vae, EpochMetrics, TrainedVae};

#[cfg(test)]
mod gradcheck {
    use super::*;
    use crate::rng::component_rng;
    use ndarray::{Array2, Array4};
    use rand::Rng as _;
    use rand_distr::Distribution;

    /// Miniature model (base 2, latent 8, 8x8 inputs): analytic gradients of
    /// the composite loss must match central finite differences.
    #[test]
    fn composite_loss_gradients_match_finite_differences() {
        let config = VaeConfig {
            base: 2,
            latent_scalar: 4,
            input_size: 8,
            batch_size: 3,
            seed: 17,
            ..VaeConfig::default()
        };
        let mut model = ConvVae::new(&config).unwrap();
        // Running-stat updates would make repeated evaluations impure.
        model.set_track_running_stats(false);

        let mut rng = component_rng(23, "gradcheck-data");
        let x = Array4::from_shape_simple_fn((3, 1, 8, 8), || rng.random::<f64>());
        let eps = Array2::from_shape_simple_fn((3, config.latent_dim()), || {
            rand_distr::StandardNormal.sample(&mut rng)
        });
        let weights = LossWeights { alpha: 0.4, lambda: 50.0, gamma: 6.0, beta: 0.5, annealing: true };
        let a_t = 0.6;

        let loss_of = |model: &mut ConvVae| -> f64 {
            let fwd = model.forward_train_with_eps(&x, eps.clone()).unwrap();
            vae_loss(&x, &fwd.reconstruction, &fwd.mu, &fwd.logvar, &weights, a_t).total
        };

        // Analytic gradient pass.
        crate::nn::zero_grads(&mut model.params());
        let fwd = model.forward_train_with_eps(&x, eps.clone()).unwrap();
        let (_, dxhat, dmu, dlogvar) =
            vae_loss_with_grad(&x, &fwd.reconstruction, &fwd.mu, &fwd.logvar, &weights, a_t);
        model.backward(&fwd, &dxhat, &dmu, &dlogvar);
        let analytic: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|p| p.grad.iter().cloned().collect())
            .collect();
        let sizes: Vec<usize> = analytic.iter().map(|g| g.len()).collect();

        // 120 random coordinates across all parameter tensors.
        let mut pick_rng = component_rng(29, "gradcheck-picks");
        let mut checked = 0;
        let mut max_rel = 0.0f64;
        while checked < 120 {
            let tensor = pick_rng.random_range(0..sizes.len());
            if sizes[tensor] == 0 {
                continue;
            }
            let coord = pick_rng.random_range(0..sizes[tensor]);
            let orig = {
                let mut params = model.params();
                params[tensor].value.as_slice_mut().unwrap()[coord]
            };
            let h = 1e-5 * orig.abs().max(1.0);
            set_coord(&mut model, tensor, coord, orig + h);
            let up = loss_of(&mut model);
            set_coord(&mut model, tensor, coord, orig - h);
            let down = loss_of(&mut model);
            set_coord(&mut model, tensor, coord, orig);
            let fd = (up - down) / (2.0 * h);
            let grad = analytic[tensor][coord];
            let denom = grad.abs().max(fd.abs());
            if denom < 1e-7 {
                // both effectively zero
                checked += 1;
                continue;
            }
            let rel = (grad - fd).abs() / denom;
            max_rel = max_rel.max(rel);
            assert!(
                rel <= 1e-4,
                "tensor {tensor} coord {coord}: analytic {grad} vs fd {fd} (rel {rel})"
            );
            checked += 1;
        }
        assert!(checked >= 100);
        println!("gradient check: {checked} coordinates, max relative error {max_rel:.3e}");
    }

    fn set_coord(model: &mut ConvVae, tensor: usize, coord: usize, value: f64) {
        let mut params = model.params();
        params[tensor].value.as_slice_mut().unwrap()[coord] = value;
    }
}
