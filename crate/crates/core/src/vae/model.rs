//! Convolutional variational autoencoder.
//!
//! Encoder: six conv blocks (conv + batch norm + GELU) with stride-2
//! downsampling in blocks 2 and 3, so the last spatial map of a 32x32 input
//! is 8x8 with `4*base` channels; feature map counts rise from `base` to
//! `16*base` across the blocks. Two dense heads (full-extent convolutions
//! over the last map) emit mu and logvar of length `latent_scalar * base`.
//! Decoder: dense projection to a `(16*base, s/8, s/8)` map, then conv blocks
//! with bilinear 2x upsampling in between (spatial 4 -> 8 -> 16 -> 32 for
//! 32x32 inputs) and a sigmoid output layer.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis};
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LnmError, Result};
use crate::nn::{BatchNorm2d, Conv2d, Gelu, Linear, ParamRef, Sigmoid, Upsample2x};
use crate::rng::{derive_seed, Rng};

/// Channel multipliers after each encoder block.
const ENC_MULT: [usize; 6] = [1, 2, 4, 16, 4, 4];
/// Strides per encoder block; two stride-2 blocks take 32 -> 16 -> 8.
const ENC_STRIDE: [usize; 6] = [1, 2, 2, 1, 1, 1];
/// Channel multipliers after each decoder block (input starts at 16*base).
const DEC_MULT: [usize; 4] = [4, 2, 1, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Feature-map scale; the published search explored 16–28.
    pub base: usize,
    /// Latent dimensionality is `latent_scalar * base`; search range 16–28.
    pub latent_scalar: usize,
    /// Kernel size per encoder block, each in [3, 8].
    pub kernel_sizes: [usize; 6],
    /// Input side length; must be a multiple of 8.
    pub input_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Gradient accumulation steps (1–3).
    pub accumulation_steps: usize,
    pub max_epochs: usize,
    /// Early stopping patience in epochs on the test SSIM.
    pub patience: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            base: 20,
            latent_scalar: 20,
            kernel_sizes: [3; 6],
            input_size: 32,
            learning_rate: 6.73e-4,
            weight_decay: 0.035,
            batch_size: 64,
            accumulation_steps: 2,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn latent_dim(&self) -> usize {
        self.base * self.latent_scalar
    }

    pub fn validate(&self) -> Result<()> {
        if self.base == 0 || self.latent_scalar == 0 {
            return Err(LnmError::Config("base and latent_scalar must be positive".into()));
        }
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(LnmError::Config(format!(
                "input_size must be a positive multiple of 8, got {}",
                self.input_size
            )));
        }
        for k in self.kernel_sizes {
            if !(3..=8).contains(&k) {
                return Err(LnmError::Config(format!("kernel sizes must be in [3,8], got {k}")));
            }
        }
        if !(1..=3).contains(&self.accumulation_steps) {
            return Err(LnmError::Config(format!(
                "accumulation_steps must be in [1,3], got {}",
                self.accumulation_steps
            )));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(LnmError::Config("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(LnmError::Config("weight_decay must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(LnmError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Gelu,
}

impl ConvBlock {
    fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut Rng) -> Self {
        ConvBlock { conv: Conv2d::new(c_in, c_out, k, stride, rng), bn: BatchNorm2d::new(c_out), act: Gelu::new() }
    }

    fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let y = self.conv.forward(x);
        let y = self.bn.forward(&y);
        self.act.forward(&y)
    }

    fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let y = self.conv.infer(x.view());
        let y = self.bn.infer(y.view());
        Gelu::infer(y.view().into_dyn())
            .into_dimensionality()
            .expect("gelu preserves shape")
    }

    fn backward(&mut self, grad: &Array4<f64>) -> Array4<f64> {
        let g = self.act.backward(grad);
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }

    fn params(&mut self) -> Vec<ParamRef<'_>> {
        vec![
            ParamRef::new(&mut self.conv.weight, &mut self.conv.grad_weight, true),
            ParamRef::new(&mut self.conv.bias, &mut self.conv.grad_bias, false),
            ParamRef::new(&mut self.bn.gamma, &mut self.bn.grad_gamma, false),
            ParamRef::new(&mut self.bn.beta, &mut self.bn.grad_beta, false),
        ]
    }

    fn state(&self, out: &mut Vec<ArrayD<f64>>) {
        out.push(self.conv.weight.clone().into_dyn());
        out.push(self.conv.bias.clone().into_dyn());
        out.push(self.bn.gamma.clone().into_dyn());
        out.push(self.bn.beta.clone().into_dyn());
        out.push(self.bn.running_mean.clone().into_dyn());
        out.push(self.bn.running_var.clone().into_dyn());
    }

    fn apply_state(&mut self, iter: &mut std::vec::IntoIter<ArrayD<f64>>) -> Result<()> {
        self.conv.weight = take(iter)?;
        self.conv.bias = take(iter)?;
        self.bn.gamma = take(iter)?;
        self.bn.beta = take(iter)?;
        self.bn.running_mean = take(iter)?;
        self.bn.running_var = take(iter)?;
        Ok(())
    }
}

fn take<D: ndarray::Dimension>(iter: &mut std::vec::IntoIter<ArrayD<f64>>) -> Result<ndarray::Array<f64, D>> {
    iter.next()
        .ok_or_else(|| LnmError::Ingestion("checkpoint has too few tensors".into()))?
        .into_dimensionality()
        .map_err(|e| LnmError::Ingestion(format!("checkpoint tensor has wrong rank: {e}")))
}

/// Cached activations of one training forward pass.
pub struct VaeForward {
    pub reconstruction: Array4<f64>,
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
    pub z: Array2<f64>,
    eps: Array2<f64>,
}

pub struct ConvVae {
    pub config: VaeConfig,
    enc: Vec<ConvBlock>,
    mu_head: Linear,
    logvar_head: Linear,
    dec_input: Linear,
    dec: Vec<ConvBlock>,
    dec_ups: Vec<Upsample2x>,
    dec_out: Conv2d,
    out_act: Sigmoid,
}

impl ConvVae {
    pub fn new(config: &VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(derive_seed(config.seed, "vae-init"));
        let b = config.base;
        let s = config.input_size;

        let mut enc = Vec::with_capacity(6);
        let mut c_in = 1;
        for i in 0..6 {
            let c_out = ENC_MULT[i] * b;
            enc.push(ConvBlock::new(c_in, c_out, config.kernel_sizes[i], ENC_STRIDE[i], &mut rng));
            c_in = c_out;
        }

        let enc_spatial = s / 4; // two stride-2 blocks
        let enc_features = 4 * b * enc_spatial * enc_spatial;
        let latent = config.latent_dim();
        let mu_head = Linear::new(enc_features, latent, &mut rng);
        let logvar_head = Linear::new(enc_features, latent, &mut rng);

        let dec_spatial = s / 8;
        let dec_input = Linear::new(latent, 16 * b * dec_spatial * dec_spatial, &mut rng);
        let mut dec = Vec::with_capacity(4);
        let mut c = 16 * b;
        for mult in DEC_MULT {
            dec.push(ConvBlock::new(c, mult * b, 3, 1, &mut rng));
            c = mult * b;
        }
        let dec_out = Conv2d::new(b, 1, 3, 1, &mut rng);

        Ok(ConvVae {
            config: config.clone(),
            enc,
            mu_head,
            logvar_head,
            dec_input,
            dec,
            dec_ups: (0..3).map(|_| Upsample2x::new()).collect(),
            dec_out,
            out_act: Sigmoid::new(),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        let s = self.config.input_size;
        if c != 1 || h != s || w != s {
            return Err(LnmError::Validation(format!(
                "encoder expects (n, 1, {s}, {s}) input, got {:?}",
                x.dim()
            )));
        }
        Ok(())
    }

    /// Last encoder spatial activation in eval mode.
    pub fn trunk_infer(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &self.enc {
            h = block.infer(&h);
        }
        Ok(h)
    }

    /// Eval-mode encoding to (mu, logvar).
    pub fn encode_batch(&self, x: &Array4<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let h = self.trunk_infer(x)?;
        let flat = flatten(&h);
        Ok((self.mu_head.infer(flat.view()), self.logvar_head.infer(flat.view())))
    }

    /// Eval-mode encoding of a single image.
    pub fn encode(&self, image: &Array2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let x = image_batch(std::slice::from_ref(image));
        let (mu, logvar) = self.encode_batch(&x)?;
        Ok((mu.row(0).to_owned(), logvar.row(0).to_owned()))
    }

    /// Mu-head weights, used to backproject latent gradients onto the last
    /// spatial map for saliency maps.
    pub fn mu_head_weight(&self) -> &Array2<f64> {
        &self.mu_head.weight
    }

    /// Shape of the last encoder spatial map: (channels, side).
    pub fn trunk_shape(&self) -> (usize, usize) {
        (4 * self.config.base, self.config.input_size / 4)
    }

    /// Eval-mode decoding.
    pub fn decode_batch(&self, z: &Array2<f64>) -> Result<Array4<f64>> {
        if z.dim().1 != self.latent_dim() {
            return Err(LnmError::Validation(format!(
                "decoder expects latent length {}, got {}",
                self.latent_dim(),
                z.dim().1
            )));
        }
        let b = self.config.base;
        let sd = self.config.input_size / 8;
        let h0 = self.dec_input.infer(z.view());
        let mut h = h0
            .into_shape_with_order((z.dim().0, 16 * b, sd, sd))
            .expect("contiguous projection");
        for (i, block) in self.dec.iter().enumerate() {
            h = block.infer(&h);
            if i < 3 {
                h = Upsample2x::infer(h.view());
            }
        }
        let y = self.dec_out.infer(h.view());
        Ok(Sigmoid::infer(y.view().into_dyn())
            .into_dimensionality()
            .expect("sigmoid preserves shape"))
    }

    pub fn decode(&self, z: &Array1<f64>) -> Result<Array2<f64>> {
        let z2 = z.view().insert_axis(Axis(0)).to_owned();
        let out = self.decode_batch(&z2)?;
        Ok(out.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned())
    }

    /// Eval-mode reconstruction through the posterior mean.
    pub fn reconstruct_batch(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (mu, _) = self.encode_batch(x)?;
        self.decode_batch(&mu)
    }

    /// Training-mode forward pass with reparameterized sampling; caches
    /// activations for [`Self::backward`].
    pub fn forward_train(&mut self, x: &Array4<f64>, rng: &mut Rng) -> Result<VaeForward> {
        let eps = Array2::from_shape_simple_fn(
            (x.dim().0, self.latent_dim()),
            || StandardNormal.sample(rng),
        );
        self.forward_train_with_eps(x, eps)
    }

    /// Training-mode forward with caller-provided noise (used by the
    /// gradient checker, which must evaluate a pure function of parameters).
    pub fn forward_train_with_eps(&mut self, x: &Array4<f64>, eps: Array2<f64>) -> Result<VaeForward> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &mut self.enc {
            h = block.forward(&h);
        }
        let flat = flatten(&h);
        let mu = self.mu_head.forward(&flat);
        let logvar = self.logvar_head.forward(&flat);
        let z = reparameterize_with_eps(&mu, &logvar, &eps);

        let b = self.config.base;
        let sd = self.config.input_size / 8;
        let h0 = self.dec_input.forward(&z);
        let mut hd = h0
            .into_shape_with_order((x.dim().0, 16 * b, sd, sd))
            .expect("contiguous projection");
        for i in 0..self.dec.len() {
            hd = self.dec[i].forward(&hd);
            if i < 3 {
                hd = self.dec_ups[i].forward(&hd);
            }
        }
        let y = self.dec_out.forward(&hd);
        let reconstruction = self.out_act.forward(&y);
        Ok(VaeForward { reconstruction, mu, logvar, z, eps })
    }

    /// Backpropagate composite-loss gradients through the whole model,
    /// accumulating parameter gradients.
    pub fn backward(&mut self, fwd: &VaeForward, dxhat: &Array4<f64>, dmu_direct: &Array2<f64>, dlogvar_direct: &Array2<f64>) {
        let g = self.out_act.backward(dxhat);
        let mut g = self.dec_out.backward(&g);
        for i in (0..self.dec.len()).rev() {
            if i < 3 {
                g = self.dec_ups[i].backward(&g);
            }
            g = self.dec[i].backward(&g);
        }
        let batch = g.dim().0;
        let gflat = flatten(&g);
        let dz = self.dec_input.backward(&gflat);

        // Reparameterization: z = mu + exp(logvar/2) * eps.
        let dmu = dz.clone() + dmu_direct;
        let mut dlogvar = dlogvar_direct.clone();
        for ((dlv, &dzv), (&e, &lv)) in dlogvar
            .iter_mut()
            .zip(dz.iter())
            .zip(fwd.eps.iter().zip(fwd.logvar.iter()))
        {
            *dlv += dzv * e * 0.5 * (0.5 * lv).exp();
        }

        let dflat_mu = self.mu_head.backward(&dmu);
        let dflat_lv = self.logvar_head.backward(&dlogvar);
        let dflat = dflat_mu + dflat_lv;
        let (c, side) = self.trunk_shape();
        let mut genc = dflat
            .into_shape_with_order((batch, c, side, side))
            .expect("contiguous trunk grad");
        for block in self.enc.iter_mut().rev() {
            genc = block.backward(&genc);
        }
    }

    pub fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut params = Vec::new();
        for block in &mut self.enc {
            params.extend(block.params());
        }
        params.push(ParamRef::new(&mut self.mu_head.weight, &mut self.mu_head.grad_weight, true));
        params.push(ParamRef::new(&mut self.mu_head.bias, &mut self.mu_head.grad_bias, false));
        params.push(ParamRef::new(&mut self.logvar_head.weight, &mut self.logvar_head.grad_weight, true));
        params.push(ParamRef::new(&mut self.logvar_head.bias, &mut self.logvar_head.grad_bias, false));
        params.push(ParamRef::new(&mut self.dec_input.weight, &mut self.dec_input.grad_weight, true));
        params.push(ParamRef::new(&mut self.dec_input.bias, &mut self.dec_input.grad_bias, false));
        for block in &mut self.dec {
            params.extend(block.params());
        }
        params.push(ParamRef::new(&mut self.dec_out.weight, &mut self.dec_out.grad_weight, true));
        params.push(ParamRef::new(&mut self.dec_out.bias, &mut self.dec_out.grad_bias, false));
        params
    }

    /// Freeze or resume running-statistic updates in every norm layer.
    pub fn set_track_running_stats(&mut self, track: bool) {
        for block in self.enc.iter_mut().chain(self.dec.iter_mut()) {
            block.bn.track_running_stats = track;
        }
    }

    /// Every tensor needed to reproduce the model, in a fixed order.
    pub fn collect_state(&self) -> Vec<ArrayD<f64>> {
        let mut out = Vec::new();
        for block in &self.enc {
            block.state(&mut out);
        }
        out.push(self.mu_head.weight.clone().into_dyn());
        out.push(self.mu_head.bias.clone().into_dyn());
        out.push(self.logvar_head.weight.clone().into_dyn());
        out.push(self.logvar_head.bias.clone().into_dyn());
        out.push(self.dec_input.weight.clone().into_dyn());
        out.push(self.dec_input.bias.clone().into_dyn());
        for block in &self.dec {
            block.state(&mut out);
        }
        out.push(self.dec_out.weight.clone().into_dyn());
        out.push(self.dec_out.bias.clone().into_dyn());
        out
    }

    pub fn apply_state(&mut self, state: Vec<ArrayD<f64>>) -> Result<()> {
        let mut iter = state.into_iter();
        for block in &mut self.enc {
            block.apply_state(&mut iter)?;
        }
        self.mu_head.weight = take(&mut iter)?;
        self.mu_head.bias = take(&mut iter)?;
        self.logvar_head.weight = take(&mut iter)?;
        self.logvar_head.bias = take(&mut iter)?;
        self.dec_input.weight = take(&mut iter)?;
        self.dec_input.bias = take(&mut iter)?;
        for block in &mut self.dec {
            block.apply_state(&mut iter)?;
        }
        self.dec_out.weight = take(&mut iter)?;
        self.dec_out.bias = take(&mut iter)?;
        if iter.next().is_some() {
            return Err(LnmError::Ingestion("checkpoint has extra tensors".into()));
        }
        Ok(())
    }
}

/// `z = mu + exp(logvar / 2) * eps`, drawing `eps ~ N(0, 1)` from `rng`.
pub fn reparameterize(mu: &Array2<f64>, logvar: &Array2<f64>, rng: &mut Rng) -> Array2<f64> {
    let eps = Array2::from_shape_simple_fn(mu.dim(), || StandardNormal.sample(rng));
    reparameterize_with_eps(mu, logvar, &eps)
}

/// Deterministic reparameterization with caller-provided noise.
pub fn reparameterize_with_eps(mu: &Array2<f64>, logvar: &Array2<f64>, eps: &Array2<f64>) -> Array2<f64> {
    assert_eq!(mu.dim(), logvar.dim(), "mu and logvar must have equal shape");
    assert_eq!(mu.dim(), eps.dim(), "eps must match mu shape");
    let mut z = mu.clone();
    for ((zv, &lv), &e) in z.iter_mut().zip(logvar.iter()).zip(eps.iter()) {
        *zv += (0.5 * lv).exp() * e;
    }
    z
}

/// Stack single-channel images into an NCHW batch.
pub fn image_batch(images: &[Array2<f64>]) -> Array4<f64> {
    assert!(!images.is_empty(), "cannot batch zero images");
    let (h, w) = images[0].dim();
    let mut out = Array4::<f64>::zeros((images.len(), 1, h, w));
    for (b, img) in images.iter().enumerate() {
        out.index_axis_mut(Axis(0), b).index_axis_mut(Axis(0), 0).assign(img);
    }
    out
}

fn flatten(x: &Array4<f64>) -> Array2<f64> {
    let (b, c, h, w) = x.dim();
    x.to_owned()
        .into_shape_with_order((b, c * h * w))
        .expect("contiguous activation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::component_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng as _;

    fn small_config() -> VaeConfig {
        VaeConfig { base: 2, latent_scalar: 4, batch_size: 3, seed: 5, ..VaeConfig::default() }
    }

    #[test]
    fn latent_dim_is_base_times_scalar() {
        let config = VaeConfig { base: 20, latent_scalar: 20, ..VaeConfig::default() };
        assert_eq!(config.latent_dim(), 400);
        let config = VaeConfig { base: 16, latent_scalar: 16, ..VaeConfig::default() };
        assert_eq!(config.latent_dim(), 256);
    }

    #[test]
    fn shape_contract_holds() {
        let config = small_config();
        let model = ConvVae::new(&config).unwrap();
        let mut rng = component_rng(1, "shape");
        let x = Array4::from_shape_simple_fn((2, 1, 32, 32), || rng.random::<f64>());
        // last encoder spatial map: 8x8 with 4*base channels
        let trunk = model.trunk_infer(&x).unwrap();
        assert_eq!(trunk.dim(), (2, 4 * config.base, 8, 8));
        let (mu, logvar) = model.encode_batch(&x).unwrap();
        assert_eq!(mu.dim(), (2, config.latent_dim()));
        assert_eq!(logvar.dim(), (2, config.latent_dim()));
        // decoder mirrors 4 -> 8 -> 16 -> 32
        let out = model.decode_batch(&mu).unwrap();
        assert_eq!(out.dim(), (2, 1, 32, 32));
    }

    #[test]
    fn encoder_channels_peak_at_sixteen_base() {
        let config = small_config();
        let mut model = ConvVae::new(&config).unwrap();
        let peaks: Vec<usize> = model.enc.iter_mut().map(|b| b.conv.weight.dim().0).collect();
        assert_eq!(peaks, vec![2, 4, 8, 32, 8, 8]); // base=2 -> 16*base=32 peak
        assert_eq!(*peaks.iter().max().unwrap(), 16 * config.base);
        assert_eq!(*peaks.last().unwrap(), 4 * config.base);
    }

    #[test]
    fn decoder_output_is_in_unit_range() {
        let model = ConvVae::new(&small_config()).unwrap();
        let mut rng = component_rng(2, "decode-range");
        let z = Array2::from_shape_simple_fn((4, model.latent_dim()), || {
            rand_distr::Distribution::<f64>::sample(&StandardNormal, &mut rng)
        });
        let out = model.decode_batch(&z).unwrap();
        assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn eval_mode_encoding_is_deterministic() {
        let model = ConvVae::new(&small_config()).unwrap();
        let mut rng = component_rng(3, "eval-det");
        let x = Array4::from_shape_simple_fn((1, 1, 32, 32), || rng.random::<f64>());
        let (mu_a, lv_a) = model.encode_batch(&x).unwrap();
        let (mu_b, lv_b) = model.encode_batch(&x).unwrap();
        assert_eq!(mu_a, mu_b);
        assert_eq!(lv_a, lv_b);
        assert!(mu_a.iter().all(|v| v.is_finite()));
        assert!(lv_a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_shapes_are_rejected() {
        let model = ConvVae::new(&small_config()).unwrap();
        let x = Array4::zeros((1, 1, 16, 16));
        assert!(matches!(model.encode_batch(&x), Err(LnmError::Validation(_))));
        let z = Array2::zeros((1, 7));
        assert!(matches!(model.decode_batch(&z), Err(LnmError::Validation(_))));
    }

    #[test]
    fn reparameterize_special_cases() {
        let mu = Array2::from_shape_fn((1, 3), |(_, j)| j as f64);
        let logvar = Array2::zeros((1, 3));
        let zero_eps = Array2::zeros((1, 3));
        assert_eq!(reparameterize_with_eps(&mu, &logvar, &zero_eps), mu);
        let unit_eps = Array2::ones((1, 3));
        let z = reparameterize_with_eps(&mu, &logvar, &unit_eps);
        for (zv, mv) in z.iter().zip(mu.iter()) {
            assert_abs_diff_eq!(zv, &(mv + 1.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn reparameterize_sample_mean_approaches_mu() {
        let mu = Array2::from_elem((1, 1), 0.7);
        let logvar = Array2::from_elem((1, 1), 0.4);
        let mut rng = component_rng(11, "reparam-mc");
        let n = 100_000;
        let mut total = 0.0;
        for _ in 0..n {
            total += reparameterize(&mu, &logvar, &mut rng)[[0, 0]];
        }
        let mean = total / n as f64;
        let sigma = (0.5 * 0.4_f64).exp();
        let bound = 3.0 * sigma / (n as f64).sqrt();
        assert!((mean - 0.7).abs() < bound, "mean {mean} outside {bound}");
    }

    #[test]
    fn state_round_trip_reproduces_forward() {
        let config = small_config();
        let model = ConvVae::new(&config).unwrap();
        let mut clone = ConvVae::new(&VaeConfig { seed: 99, ..config.clone() }).unwrap();
        clone.apply_state(model.collect_state()).unwrap();
        let mut rng = component_rng(4, "state-rt");
        let x = Array4::from_shape_simple_fn((2, 1, 32, 32), || rng.random::<f64>());
        let a = model.reconstruct_batch(&x).unwrap();
        let b = clone.reconstruct_batch(&x).unwrap();
        assert_eq!(a, b);
    }
}
