//! Two-stage multiple-instance classifier.
//!
//! A node MLP maps each node's (latent, morphometry) input to a malignancy
//! probability; a 4-layer patient MLP consumes the padded node probabilities,
//! clinical covariates and the largest-node features. The final probability
//! is `eta * patient_mlp + (1 - eta) * max node probability`, thresholded for
//! the decision. Node-level supervision does not exist; the node MLP learns
//! only through the patient-level loss.

use ndarray::{Array1, Array2, ArrayD};
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use super::features::{BagFeatures, CLINICAL_LEN};
use crate::error::{LnmError, Result};
use crate::morphometry::FEATURE_COUNT;
use crate::nn::{BatchNorm1d, Dropout, Gelu, Linear, ParamRef, Sigmoid};
use crate::rng::{derive_seed, Rng};

/// Input-side and aggregation switches; the ablation study flips these one
/// at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    Weighted,
    MaxOnly,
    MlpOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub use_deep_features: bool,
    pub use_clinical_node: bool,
    pub use_clinical_patient: bool,
    pub aggregation: Aggregation,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            use_deep_features: true,
            use_clinical_node: true,
            use_clinical_patient: true,
            aggregation: Aggregation::Weighted,
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.use_deep_features && !self.use_clinical_node && !self.use_clinical_patient {
            return Err(LnmError::Config("ablation disables every feature source".into()));
        }
        if !self.use_deep_features && !self.use_clinical_node {
            return Err(LnmError::Config(
                "node model needs deep features or node morphometry as input".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilConfig {
    /// Weight of the patient MLP in the final sum; declared range [0.5, 0.75].
    pub eta: f64,
    /// Permits eta outside the declared range (logged), mirroring reported
    /// optima above it.
    pub eta_override: bool,
    pub threshold: f64,
    pub patch_hidden_dim: usize,
    pub patient_hidden_dim: usize,
    pub patch_dropout: f64,
    pub patient_dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub max_epochs: usize,
    /// Synthetic patients appended to the training split (0 disables).
    pub synthetic_patients: usize,
    pub oversample_ratio: f64,
    pub max_patches: usize,
    pub seed: u64,
}

impl Default for MilConfig {
    fn default() -> Self {
        MilConfig {
            eta: 0.6,
            eta_override: false,
            threshold: 0.436,
            patch_hidden_dim: 2048,
            patient_hidden_dim: 96,
            patch_dropout: 0.4,
            patient_dropout: 0.3,
            learning_rate: 6.59e-3,
            weight_decay: 0.016,
            batch_size: 32,
            accumulation_steps: 1,
            max_epochs: 60,
            synthetic_patients: 25,
            oversample_ratio: 1.5,
            max_patches: 15,
            seed: 0,
        }
    }
}

impl MilConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.threshold) || self.threshold <= 0.0 {
            return Err(LnmError::Config(format!("threshold must be in (0,1), got {}", self.threshold)));
        }
        if !(0.5..=0.75).contains(&self.eta) {
            if self.eta_override && (0.0..=1.0).contains(&self.eta) {
                log::warn!("eta = {} overrides the declared range [0.5, 0.75]", self.eta);
            } else {
                return Err(LnmError::Config(format!(
                    "eta must be in [0.5, 0.75] unless eta_override is set, got {}",
                    self.eta
                )));
            }
        }
        for (name, p) in [("patch_dropout", self.patch_dropout), ("patient_dropout", self.patient_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(LnmError::Config(format!("{name} must be in [0,1), got {p}")));
            }
        }
        if self.synthetic_patients > 30 || (self.synthetic_patients != 0 && self.synthetic_patients < 5) {
            return Err(LnmError::Config(format!(
                "synthetic_patients must be 0 (disabled) or in [5,30], got {}",
                self.synthetic_patients
            )));
        }
        if self.patch_hidden_dim == 0 || self.patient_hidden_dim == 0 || self.batch_size == 0 {
            return Err(LnmError::Config("hidden dims and batch size must be positive".into()));
        }
        if self.max_patches == 0 {
            return Err(LnmError::Config("max_patches must be positive".into()));
        }
        if self.learning_rate <= 0.0 || self.weight_decay < 0.0 {
            return Err(LnmError::Config("learning rate must be positive, weight decay nonnegative".into()));
        }
        if self.oversample_ratio <= 0.0 {
            return Err(LnmError::Config("oversample_ratio must be positive".into()));
        }
        Ok(())
    }
}

/// Input layout version written into model files; bump when the patient
/// input ordering changes.
pub const INPUT_LAYOUT_VERSION: u32 = 1;

struct NodeMlp {
    fc1: Linear,
    bn: BatchNorm1d,
    act: Gelu,
    dropout: Dropout,
    fc2: Linear,
    sig: Sigmoid,
}

struct PatientMlp {
    layers: Vec<(Linear, BatchNorm1d, Gelu, Dropout)>,
    out: Linear,
    sig: Sigmoid,
}

pub struct MilModel {
    pub config: MilConfig,
    pub spec: AblationSpec,
    pub latent_dim: usize,
    node: NodeMlp,
    patient: PatientMlp,
}

/// Cached activations of one training forward pass over a batch of bags.
pub struct MilForward {
    /// Global node rows per bag: (start, end).
    bag_ranges: Vec<(usize, usize)>,
    pub node_probs: Array1<f64>,
    pub patient_probs: Vec<f64>,
    pub max_probs: Vec<f64>,
    argmax: Vec<Option<usize>>,
    pub final_probs: Vec<f64>,
}

/// Per-patient inference record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub patient_id: String,
    pub label: u8,
    pub node_probs: Vec<f64>,
    pub patient_mlp_prob: f64,
    pub max_node_prob: f64,
    pub final_prob: f64,
    pub decision: u8,
    /// Set when the bag had no real nodes and the documented fallback
    /// (all-zero node probabilities) was used.
    pub fallback: bool,
}

impl PredictionTrace {
    /// Recompute the aggregation from the stored pieces; replayed by tests.
    pub fn replay_final(&self, eta: f64, aggregation: Aggregation) -> f64 {
        aggregate(self.patient_mlp_prob, self.max_node_prob, eta, aggregation)
    }
}

pub fn aggregate(p_mlp: f64, p_max: f64, eta: f64, aggregation: Aggregation) -> f64 {
    match aggregation {
        Aggregation::Weighted => eta * p_mlp + (1.0 - eta) * p_max,
        Aggregation::MaxOnly => p_max,
        Aggregation::MlpOnly => p_mlp,
    }
}

/// Decision convention: probabilities at or above the threshold are positive.
pub fn decide(final_prob: f64, threshold: f64) -> u8 {
    u8::from(final_prob >= threshold)
}

impl MilModel {
    pub fn new(config: &MilConfig, spec: &AblationSpec, latent_dim: usize) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let mut rng = Rng::seed_from_u64(derive_seed(config.seed, "mil-init"));
        let node_in = Self::node_input_dim_for(spec, latent_dim);
        let node = NodeMlp {
            fc1: Linear::new(node_in, config.patch_hidden_dim, &mut rng),
            bn: BatchNorm1d::new(config.patch_hidden_dim),
            act: Gelu::new(),
            dropout: Dropout::new(config.patch_dropout),
            fc2: Linear::new(config.patch_hidden_dim, 1, &mut rng),
            sig: Sigmoid::new(),
        };
        let patient_in = Self::patient_input_dim_for(spec, config.max_patches);
        let h = config.patient_hidden_dim;
        let mut layers = Vec::new();
        let mut dim = patient_in;
        for _ in 0..3 {
            layers.push((
                Linear::new(dim, h, &mut rng),
                BatchNorm1d::new(h),
                Gelu::new(),
                Dropout::new(config.patient_dropout),
            ));
            dim = h;
        }
        let patient = PatientMlp { layers, out: Linear::new(dim, 1, &mut rng), sig: Sigmoid::new() };
        Ok(MilModel { config: config.clone(), spec: *spec, latent_dim, node, patient })
    }

    fn node_input_dim_for(spec: &AblationSpec, latent_dim: usize) -> usize {
        let mut dim = 0;
        if spec.use_deep_features {
            dim += latent_dim;
        }
        if spec.use_clinical_node {
            dim += FEATURE_COUNT;
        }
        dim
    }

    fn patient_input_dim_for(spec: &AblationSpec, max_patches: usize) -> usize {
        let mut dim = max_patches;
        if spec.use_clinical_patient {
            dim += CLINICAL_LEN;
        }
        if spec.use_clinical_node {
            dim += FEATURE_COUNT;
        }
        dim
    }

    pub fn node_input_dim(&self) -> usize {
        Self::node_input_dim_for(&self.spec, self.latent_dim)
    }

    pub fn patient_input_dim(&self) -> usize {
        Self::patient_input_dim_for(&self.spec, self.config.max_patches)
    }

    /// Node input row for one node of a bag.
    fn node_row(&self, feats: &BagFeatures, k: usize, out: &mut [f64]) {
        let mut at = 0;
        if self.spec.use_deep_features {
            for j in 0..self.latent_dim {
                out[at + j] = feats.latents[[k, j]];
            }
            at += self.latent_dim;
        }
        if self.spec.use_clinical_node {
            for j in 0..FEATURE_COUNT {
                out[at + j] = feats.node_features[[k, j]];
            }
        }
    }

    /// Patient input row: `[node prob slots | clinical | largest-node features]`.
    fn patient_row(&self, feats: &BagFeatures, slots: &[f64], out: &mut [f64]) {
        let mp = self.config.max_patches;
        out[..mp].copy_from_slice(slots);
        let mut at = mp;
        if self.spec.use_clinical_patient {
            out[at..at + CLINICAL_LEN].copy_from_slice(&feats.clinical);
            at += CLINICAL_LEN;
        }
        if self.spec.use_clinical_node {
            out[at..at + FEATURE_COUNT].copy_from_slice(&feats.largest_node_features);
        }
    }

    fn gather_node_inputs(&self, batch: &[&BagFeatures]) -> (Array2<f64>, Vec<(usize, usize)>) {
        let total: usize = batch.iter().map(|f| f.n_nodes()).sum();
        let dim = self.node_input_dim();
        let mut rows = Array2::<f64>::zeros((total, dim));
        let mut ranges = Vec::with_capacity(batch.len());
        let mut at = 0;
        for feats in batch {
            let start = at;
            for k in 0..feats.n_nodes() {
                self.node_row(feats, k, rows.row_mut(at).as_slice_mut().expect("contiguous row"));
                at += 1;
            }
            ranges.push((start, at));
        }
        (rows, ranges)
    }

    /// Training-mode forward over a batch of bags.
    pub fn forward_train(&mut self, batch: &[&BagFeatures], rng: &mut Rng) -> MilForward {
        let (node_inputs, bag_ranges) = self.gather_node_inputs(batch);
        let node_probs: Array1<f64> = if node_inputs.dim().0 > 0 {
            let h = self.node.fc1.forward(&node_inputs);
            let h = self.node.bn.forward(&h);
            let h = self.node.act.forward(&h);
            let h = self.node.dropout.forward(&h, rng);
            let h = self.node.fc2.forward(&h);
            let p = self.node.sig.forward(&h);
            p.column(0).to_owned()
        } else {
            Array1::zeros(0)
        };

        let mp = self.config.max_patches;
        let mut patient_input = Array2::<f64>::zeros((batch.len(), self.patient_input_dim()));
        let mut max_probs = Vec::with_capacity(batch.len());
        let mut argmax = Vec::with_capacity(batch.len());
        for (i, feats) in batch.iter().enumerate() {
            let (start, end) = bag_ranges[i];
            let mut slots = vec![0.0; mp];
            let mut best: Option<(usize, f64)> = None;
            for (slot, row) in (start..end).enumerate() {
                let p = node_probs[row];
                slots[slot] = p;
                if best.map_or(true, |(_, bp)| p > bp) {
                    best = Some((row, p));
                }
            }
            max_probs.push(best.map_or(0.0, |(_, p)| p));
            argmax.push(best.map(|(row, _)| row));
            self.patient_row(feats, &slots, patient_input.row_mut(i).as_slice_mut().expect("contiguous row"));
        }

        let mut h = patient_input;
        for (fc, bn, act, dropout) in &mut self.patient.layers {
            h = fc.forward(&h);
            h = bn.forward(&h);
            h = act.forward(&h);
            h = dropout.forward(&h, rng);
        }
        let h = self.patient.out.forward(&h);
        let p = self.patient.sig.forward(&h);
        let patient_probs: Vec<f64> = p.column(0).to_vec();

        let final_probs = patient_probs
            .iter()
            .zip(max_probs.iter())
            .map(|(&pm, &px)| aggregate(pm, px, self.config.eta, self.spec.aggregation))
            .collect();
        MilForward { bag_ranges, node_probs, patient_probs, max_probs, argmax, final_probs }
    }

    /// Backpropagate gradients of the loss with respect to the final
    /// probabilities; accumulates parameter gradients.
    pub fn backward(&mut self, fwd: &MilForward, dfinal: &[f64]) {
        let eta = self.config.eta;
        let n_bags = dfinal.len();
        let (mut dp_mlp, mut dp_max) = (vec![0.0; n_bags], vec![0.0; n_bags]);
        for i in 0..n_bags {
            match self.spec.aggregation {
                Aggregation::Weighted => {
                    dp_mlp[i] = eta * dfinal[i];
                    dp_max[i] = (1.0 - eta) * dfinal[i];
                }
                Aggregation::MaxOnly => dp_max[i] = dfinal[i],
                Aggregation::MlpOnly => dp_mlp[i] = dfinal[i],
            }
        }

        // Patient branch.
        let dp = Array2::from_shape_fn((n_bags, 1), |(i, _)| dp_mlp[i]);
        let g = self.patient.sig.backward(&dp);
        let mut g = self.patient.out.backward(&g);
        for (fc, bn, act, dropout) in self.patient.layers.iter_mut().rev() {
            g = dropout.backward(&g);
            g = act.backward(&g);
            g = bn.backward(&g);
            g = fc.backward(&g);
        }

        // Node probabilities receive gradient from the patient-input slots
        // and from the max path (routed to the argmax node).
        let mut dnode = Array1::<f64>::zeros(fwd.node_probs.len());
        let mp = self.config.max_patches;
        for (i, &(start, end)) in fwd.bag_ranges.iter().enumerate() {
            for (slot, row) in (start..end).enumerate() {
                if slot < mp {
                    dnode[row] += g[[i, slot]];
                }
            }
            if let Some(row) = fwd.argmax[i] {
                dnode[row] += dp_max[i];
            }
        }

        if fwd.node_probs.is_empty() {
            return;
        }
        let dnode2 = Array2::from_shape_fn((dnode.len(), 1), |(i, _)| dnode[i]);
        let g = self.node.sig.backward(&dnode2);
        let g = self.node.fc2.backward(&g);
        let g = self.node.dropout.backward(&g);
        let g = self.node.act.backward(&g);
        let g = self.node.bn.backward(&g);
        let _ = self.node.fc1.backward(&g);
    }

    /// Eval-mode probability for a single node input.
    pub fn node_probability(&self, input: &Array1<f64>) -> Result<f64> {
        if input.len() != self.node_input_dim() {
            return Err(LnmError::Validation(format!(
                "node input length {} does not match model ({})",
                input.len(),
                self.node_input_dim()
            )));
        }
        let x = input.view().insert_axis(ndarray::Axis(0)).to_owned();
        Ok(self.node_infer(&x)[0])
    }

    fn node_infer(&self, inputs: &Array2<f64>) -> Vec<f64> {
        let h = self.node.fc1.infer(inputs.view());
        let h = self.node.bn.infer(h.view());
        let h = Gelu::infer(h.view().into_dyn()).into_dimensionality::<ndarray::Ix2>().expect("2d");
        let h = self.node.fc2.infer(h.view());
        let p = Sigmoid::infer(h.view().into_dyn()).into_dimensionality::<ndarray::Ix2>().expect("2d");
        p.column(0).to_vec()
    }

    /// Eval-mode prediction trace for one bag.
    pub fn patient_forward(&self, feats: &BagFeatures) -> PredictionTrace {
        let n = feats.n_nodes();
        let (node_probs, fallback) = if n == 0 {
            (Vec::new(), true)
        } else {
            let (inputs, _) = self.gather_node_inputs(&[feats]);
            (self.node_infer(&inputs), false)
        };
        let mp = self.config.max_patches;
        let mut slots = vec![0.0; mp];
        let mut max_prob = 0.0f64;
        for (slot, &p) in node_probs.iter().enumerate() {
            if slot < mp {
                slots[slot] = p;
            }
            max_prob = max_prob.max(p);
        }
        let mut input = Array2::<f64>::zeros((1, self.patient_input_dim()));
        self.patient_row(feats, &slots, input.row_mut(0).as_slice_mut().expect("contiguous row"));
        let mut h = input;
        for (fc, bn, _, _) in &self.patient.layers {
            h = fc.infer(h.view());
            h = bn.infer(h.view());
            h = Gelu::infer(h.view().into_dyn()).into_dimensionality().expect("2d");
        }
        let h = self.patient.out.infer(h.view());
        let p_mlp = Sigmoid::infer(h.view().into_dyn()).into_dimensionality::<ndarray::Ix2>().expect("2d")[[0, 0]];
        let final_prob = aggregate(p_mlp, max_prob, self.config.eta, self.spec.aggregation);
        PredictionTrace {
            patient_id: feats.patient_id.clone(),
            label: feats.label as u8,
            node_probs,
            patient_mlp_prob: p_mlp,
            max_node_prob: max_prob,
            final_prob,
            decision: decide(final_prob, self.config.threshold),
            fallback,
        }
    }

    pub fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut params = vec![
            ParamRef::new(&mut self.node.fc1.weight, &mut self.node.fc1.grad_weight, true),
            ParamRef::new(&mut self.node.fc1.bias, &mut self.node.fc1.grad_bias, false),
            ParamRef::new(&mut self.node.bn.gamma, &mut self.node.bn.grad_gamma, false),
            ParamRef::new(&mut self.node.bn.beta, &mut self.node.bn.grad_beta, false),
            ParamRef::new(&mut self.node.fc2.weight, &mut self.node.fc2.grad_weight, true),
            ParamRef::new(&mut self.node.fc2.bias, &mut self.node.fc2.grad_bias, false),
        ];
        for (fc, bn, _, _) in &mut self.patient.layers {
            params.push(ParamRef::new(&mut fc.weight, &mut fc.grad_weight, true));
            params.push(ParamRef::new(&mut fc.bias, &mut fc.grad_bias, false));
            params.push(ParamRef::new(&mut bn.gamma, &mut bn.grad_gamma, false));
            params.push(ParamRef::new(&mut bn.beta, &mut bn.grad_beta, false));
        }
        params.push(ParamRef::new(&mut self.patient.out.weight, &mut self.patient.out.grad_weight, true));
        params.push(ParamRef::new(&mut self.patient.out.bias, &mut self.patient.out.grad_bias, false));
        params
    }

    pub fn collect_state(&self) -> Vec<ArrayD<f64>> {
        let mut out = Vec::new();
        out.push(self.node.fc1.weight.clone().into_dyn());
        out.push(self.node.fc1.bias.clone().into_dyn());
        out.push(self.node.bn.gamma.clone().into_dyn());
        out.push(self.node.bn.beta.clone().into_dyn());
        out.push(self.node.bn.running_mean.clone().into_dyn());
        out.push(self.node.bn.running_var.clone().into_dyn());
        out.push(self.node.fc2.weight.clone().into_dyn());
        out.push(self.node.fc2.bias.clone().into_dyn());
        for (fc, bn, _, _) in &self.patient.layers {
            out.push(fc.weight.clone().into_dyn());
            out.push(fc.bias.clone().into_dyn());
            out.push(bn.gamma.clone().into_dyn());
            out.push(bn.beta.clone().into_dyn());
            out.push(bn.running_mean.clone().into_dyn());
            out.push(bn.running_var.clone().into_dyn());
        }
        out.push(self.patient.out.weight.clone().into_dyn());
        out.push(self.patient.out.bias.clone().into_dyn());
        out
    }

    pub fn apply_state(&mut self, state: Vec<ArrayD<f64>>) -> Result<()> {
        let mut iter = state.into_iter();
        self.node.fc1.weight = next_tensor(&mut iter)?;
        self.node.fc1.bias = next_tensor(&mut iter)?;
        self.node.bn.gamma = next_tensor(&mut iter)?;
        self.node.bn.beta = next_tensor(&mut iter)?;
        self.node.bn.running_mean = next_tensor(&mut iter)?;
        self.node.bn.running_var = next_tensor(&mut iter)?;
        self.node.fc2.weight = next_tensor(&mut iter)?;
        self.node.fc2.bias = next_tensor(&mut iter)?;
        for (fc, bn, _, _) in &mut self.patient.layers {
            fc.weight = next_tensor(&mut iter)?;
            fc.bias = next_tensor(&mut iter)?;
            bn.gamma = next_tensor(&mut iter)?;
            bn.beta = next_tensor(&mut iter)?;
            bn.running_mean = next_tensor(&mut iter)?;
            bn.running_var = next_tensor(&mut iter)?;
        }
        self.patient.out.weight = next_tensor(&mut iter)?;
        self.patient.out.bias = next_tensor(&mut iter)?;
        if iter.next().is_some() {
            return Err(LnmError::Ingestion("model file has extra tensors".into()));
        }
        Ok(())
    }
}

fn next_tensor<D: ndarray::Dimension>(iter: &mut std::vec::IntoIter<ArrayD<f64>>) -> Result<ndarray::Array<f64, D>> {
    iter.next()
        .ok_or_else(|| LnmError::Ingestion("model file has too few tensors".into()))?
        .into_dimensionality()
        .map_err(|e| LnmError::Ingestion(format!("model tensor has wrong rank: {e}")))
}

/// Binary cross-entropy over final probabilities, with its gradient.
pub fn bce_with_grad(probs: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels.iter()) {
        let pc = p.clamp(1e-7, 1.0 - 1e-7);
        loss += -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
        grad.push((pc - y) / (pc * (1.0 - pc)) / n);
    }
    (loss / n, grad)
}
