//! Deterministic synthetic phantom generator.
//!
//! Patients are assembled from soft-edged elliptical nodes on a structured
//! background. Node size, border irregularity and texture heterogeneity are
//! drawn per node and recorded in the manifest; the patient label follows the
//! oracle rule in [`super::oracle_label`]. The generator is pure given the
//! seed: the same spec produces bit-identical corpora.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    oracle_label, CohortManifest, Corpus, NodeDescriptor, PatchRecord, PatientBag, PatientMeta,
    Sex, SplitAssignment, TStage, VoxelSpacing, PATCH_SIZE,
};
use crate::error::{LnmError, Result};
use crate::rng::{derive_seed, Rng};

/// Forces every patient to a single node with fixed properties; used to probe
/// the oracle rule directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcedNode {
    pub short_axis_mm: f64,
    pub irregular: bool,
    pub heterogeneous: bool,
}

/// Parameters of the phantom cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n_patients: usize,
    /// Fraction of patients labeled positive; the realized count is
    /// `round(n_patients * positive_fraction)`.
    pub positive_fraction: f64,
    pub nodes_per_patient_mean: f64,
    pub nodes_per_patient_sd: f64,
    pub max_nodes: usize,
    /// Short-axis range (mm) for benign nodes.
    pub benign_short_axis_mm: (f64, f64),
    /// Short-axis range (mm) for size-branch malignant nodes.
    pub malignant_short_axis_mm: (f64, f64),
    /// Short-axis range (mm) for shape/texture-branch malignant nodes.
    pub combined_short_axis_mm: (f64, f64),
    /// Probability that a malignant node qualifies through the
    /// shape/texture branch instead of the size branch.
    pub combined_branch_fraction: f64,
    /// Inclusive range for the number of malignant nodes per positive
    /// patient (the cohort source does not pin this; it stays a parameter).
    pub positive_nodes_range: (usize, usize),
    /// Boundary perturbation amplitude for irregular / smooth nodes.
    pub irregular_amplitude: (f64, f64),
    pub smooth_amplitude: (f64, f64),
    /// Intra-node texture amplitude for heterogeneous / homogeneous nodes.
    pub heterogeneous_texture: (f64, f64),
    pub homogeneous_texture: (f64, f64),
    /// Fraction of patients assigned to the training split.
    pub train_fraction: f64,
    pub spacing: VoxelSpacing,
    pub force_single_node: Option<ForcedNode>,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_patients: 168,
            positive_fraction: 0.22,
            nodes_per_patient_mean: 5.9,
            nodes_per_patient_sd: 3.8,
            max_nodes: 15,
            benign_short_axis_mm: (3.0, 7.5),
            malignant_short_axis_mm: (8.0, 10.5),
            combined_short_axis_mm: (5.5, 7.5),
            combined_branch_fraction: 0.3,
            positive_nodes_range: (1, 3),
            irregular_amplitude: (0.12, 0.2),
            smooth_amplitude: (0.0, 0.04),
            heterogeneous_texture: (0.18, 0.3),
            homogeneous_texture: (0.0, 0.05),
            train_fraction: 0.65,
            spacing: VoxelSpacing::default(),
            force_single_node: None,
            seed: 7,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.spacing.validate()?;
        if self.n_patients == 0 {
            return Err(LnmError::Config("n_patients must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.positive_fraction) {
            return Err(LnmError::Config(format!(
                "positive_fraction must be in (0,1), got {}",
                self.positive_fraction
            )));
        }
        if self.nodes_per_patient_mean <= 0.0 || self.nodes_per_patient_sd < 0.0 {
            return Err(LnmError::Config("node count distribution parameters must be positive".into()));
        }
        if self.max_nodes == 0 || self.max_nodes > 15 {
            return Err(LnmError::Config("max_nodes must be in [1,15]".into()));
        }
        for (name, range) in [
            ("benign_short_axis_mm", self.benign_short_axis_mm),
            ("malignant_short_axis_mm", self.malignant_short_axis_mm),
            ("combined_short_axis_mm", self.combined_short_axis_mm),
            ("irregular_amplitude", self.irregular_amplitude),
            ("smooth_amplitude", self.smooth_amplitude),
            ("heterogeneous_texture", self.heterogeneous_texture),
            ("homogeneous_texture", self.homogeneous_texture),
        ] {
            if !(range.0.is_finite() && range.1.is_finite()) || range.0 > range.1 {
                return Err(LnmError::Config(format!("{name} range {range:?} is invalid")));
            }
        }
        if !(0.0..=1.0).contains(&self.combined_branch_fraction) {
            return Err(LnmError::Config("combined_branch_fraction must be in [0,1]".into()));
        }
        if self.positive_nodes_range.0 == 0 || self.positive_nodes_range.0 > self.positive_nodes_range.1 {
            return Err(LnmError::Config("positive_nodes_range must be a nonempty 1-based range".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(LnmError::Config("train_fraction must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Generate the phantom cohort described by `spec`.
pub fn generate_phantom_corpus(spec: &PhantomSpec) -> Result<Corpus> {
    spec.validate()?;

    let n = spec.n_patients;
    let n_positive = ((n as f64) * spec.positive_fraction).round() as usize;

    // Shuffle patient indices once to decide which are positive.
    let mut assign_rng = Rng::seed_from_u64(derive_seed(spec.seed, "label-assignment"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut assign_rng);
    let mut positive = vec![false; n];
    for &idx in order.iter().take(n_positive) {
        positive[idx] = true;
    }

    let mut bags: Vec<PatientBag> = (0..n)
        .into_par_iter()
        .map(|i| generate_patient(spec, i, positive[i]))
        .collect();
    bags.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));

    // Stratified train/test split by patient.
    let mut split_rng = Rng::seed_from_u64(derive_seed(spec.seed, "split"));
    let mut pos_ids: Vec<String> = bags.iter().filter(|b| b.label == 1).map(|b| b.patient_id.clone()).collect();
    let mut neg_ids: Vec<String> = bags.iter().filter(|b| b.label == 0).map(|b| b.patient_id.clone()).collect();
    pos_ids.shuffle(&mut split_rng);
    neg_ids.shuffle(&mut split_rng);
    let n_train_pos = ((pos_ids.len() as f64) * spec.train_fraction).round() as usize;
    let n_train_neg = ((neg_ids.len() as f64) * spec.train_fraction).round() as usize;
    let mut train: Vec<String> = pos_ids[..n_train_pos].to_vec();
    train.extend_from_slice(&neg_ids[..n_train_neg]);
    let mut test: Vec<String> = pos_ids[n_train_pos..].to_vec();
    test.extend_from_slice(&neg_ids[n_train_neg..]);
    train.sort();
    test.sort();

    let realized_positive = bags.iter().filter(|b| b.label == 1).count();
    let manifest = CohortManifest {
        format_version: 1,
        seed: spec.seed,
        spacing: spec.spacing,
        split: SplitAssignment { train, test },
        n_positive: realized_positive,
        n_negative: n - realized_positive,
        patients: bags
            .iter()
            .map(|b| PatientMeta {
                patient_id: b.patient_id.clone(),
                age: b.age,
                sex: b.sex,
                t_stage: b.t_stage,
                label: b.label,
                is_synthetic: b.is_synthetic,
                parent_id: b.parent_id.clone(),
                nodes: b.nodes.clone(),
                patch_index: b.patches.iter().map(|p| (p.node_id.clone(), p.slice_index)).collect(),
                patch_file: format!("patients/{}.bin", b.patient_id),
                checksum: String::new(), // filled in by save_corpus
            })
            .collect(),
    };

    let corpus = Corpus { bags, manifest };
    corpus.verify_oracle_consistency()?;
    Ok(corpus)
}

fn generate_patient(spec: &PhantomSpec, index: usize, assigned_positive: bool) -> PatientBag {
    let patient_id = format!("p{index:04}");
    let mut rng = Rng::seed_from_u64(derive_seed(spec.seed, &format!("patient-{index}")));

    let age = sample_truncated_normal(&mut rng, 69.0, 11.0, 35.0, 95.0);
    let sex = if rng.random::<f64>() < 0.68 { Sex::M } else { Sex::F };
    // Positive patients skew toward later tumour stages.
    let t_probs: [f64; 4] = if assigned_positive {
        [0.08, 0.35, 0.42, 0.15]
    } else {
        [0.22, 0.50, 0.24, 0.04]
    };
    let t_stage = match sample_categorical(&mut rng, &t_probs) {
        0 => TStage::T1,
        1 => TStage::T2,
        2 => TStage::T3,
        _ => TStage::T4,
    };

    let nodes_spec = plan_nodes(spec, &mut rng, assigned_positive);

    // Distribute extra slices while the patch budget allows.
    let mut slice_counts = vec![1usize; nodes_spec.len()];
    let mut total = nodes_spec.len();
    for count in slice_counts.iter_mut() {
        if total >= spec.max_nodes {
            break;
        }
        let extra = match rng.random::<f64>() {
            x if x < 0.75 => 0,
            x if x < 0.95 => 1,
            _ => 2,
        };
        let extra = extra.min(spec.max_nodes - total);
        *count += extra;
        total += extra;
    }

    let mut patches = Vec::with_capacity(total);
    let mut descriptors = Vec::with_capacity(nodes_spec.len());
    for (ni, plan) in nodes_spec.iter().enumerate() {
        let node_id = format!("{patient_id}-n{ni:02}");
        for slice_index in 0..slice_counts[ni] {
            let scale = if slice_index == 0 {
                1.0
            } else {
                // Linear shrink; area ratio spans the half-area rule boundary.
                rng.random_range(0.55..0.95)
            };
            let patch = render_patch(spec, &mut rng, &patient_id, &node_id, slice_index, plan, scale);
            patches.push(patch);
        }
        descriptors.push(NodeDescriptor {
            node_id,
            short_axis_mm: plan.short_axis_mm,
            long_axis_mm: plan.long_axis_mm,
            irregular: plan.irregular,
            heterogeneous: plan.heterogeneous,
            n_slices: slice_counts[ni],
        });
    }

    let label = oracle_label(&descriptors);
    if spec.force_single_node.is_none() {
        debug_assert_eq!(label == 1, assigned_positive, "construction must realize the assigned label");
    }

    PatientBag {
        patient_id,
        patches,
        age,
        sex,
        t_stage,
        label,
        is_synthetic: false,
        parent_id: None,
        nodes: descriptors,
    }
}

/// Geometric plan for one node, shared by all its slices.
struct NodePlan {
    short_axis_mm: f64,
    long_axis_mm: f64,
    semi_minor_px: f64,
    semi_major_px: f64,
    irregular: bool,
    heterogeneous: bool,
    boundary_amp: f64,
    texture_amp: f64,
    angle: f64,
    contrast: f64,
}

fn plan_nodes(spec: &PhantomSpec, rng: &mut Rng, assigned_positive: bool) -> Vec<NodePlan> {
    if let Some(forced) = spec.force_single_node {
        return vec![make_plan(spec, rng, forced.short_axis_mm, forced.irregular, forced.heterogeneous)];
    }

    let n_nodes = loop {
        let normal = Normal::new(spec.nodes_per_patient_mean, spec.nodes_per_patient_sd).expect("valid normal");
        let v = normal.sample(rng).round();
        if v >= 1.0 && v <= spec.max_nodes as f64 {
            break v as usize;
        }
    };

    let mut plans = Vec::with_capacity(n_nodes);
    if assigned_positive {
        let lo = spec.positive_nodes_range.0.min(n_nodes);
        let hi = spec.positive_nodes_range.1.min(n_nodes);
        let n_malignant = rng.random_range(lo..=hi).max(1);
        for _ in 0..n_malignant {
            if rng.random::<f64>() < spec.combined_branch_fraction {
                let short = rng.random_range(spec.combined_short_axis_mm.0..=spec.combined_short_axis_mm.1);
                plans.push(make_plan(spec, rng, short, true, true));
            } else {
                let short = rng.random_range(spec.malignant_short_axis_mm.0..=spec.malignant_short_axis_mm.1);
                let irregular = rng.random::<f64>() < 0.5;
                let heterogeneous = rng.random::<f64>() < 0.5;
                plans.push(make_plan(spec, rng, short, irregular, heterogeneous));
            }
        }
        for _ in plans.len()..n_nodes {
            plans.push(benign_plan(spec, rng));
        }
    } else {
        for _ in 0..n_nodes {
            plans.push(benign_plan(spec, rng));
        }
    }
    plans
}

fn benign_plan(spec: &PhantomSpec, rng: &mut Rng) -> NodePlan {
    let short = rng.random_range(spec.benign_short_axis_mm.0..=spec.benign_short_axis_mm.1);
    // A benign node may be irregular or heterogeneous but never both while
    // at or above the combined-size threshold.
    let (irregular, heterogeneous) = if short >= super::ORACLE_COMBINED_SIZE_MM {
        match rng.random_range(0..3) {
            0 => (false, false),
            1 => (true, false),
            _ => (false, true),
        }
    } else {
        (rng.random::<f64>() < 0.4, rng.random::<f64>() < 0.4)
    };
    make_plan(spec, rng, short, irregular, heterogeneous)
}

fn make_plan(spec: &PhantomSpec, rng: &mut Rng, short_axis_mm: f64, irregular: bool, heterogeneous: bool) -> NodePlan {
    let semi_minor_px = short_axis_mm / (2.0 * spec.spacing.in_plane_mm);
    let ratio = rng.random_range(0.6..0.9);
    // Keep the node inside the patch with room for jitter and perturbation.
    let semi_major_px = (semi_minor_px / ratio).min(12.5);
    let boundary_amp = if irregular {
        rng.random_range(spec.irregular_amplitude.0..=spec.irregular_amplitude.1)
    } else {
        rng.random_range(spec.smooth_amplitude.0..=spec.smooth_amplitude.1)
    };
    let texture_amp = if heterogeneous {
        rng.random_range(spec.heterogeneous_texture.0..=spec.heterogeneous_texture.1)
    } else {
        rng.random_range(spec.homogeneous_texture.0..=spec.homogeneous_texture.1)
    };
    NodePlan {
        short_axis_mm,
        long_axis_mm: 2.0 * semi_major_px * spec.spacing.in_plane_mm,
        semi_minor_px,
        semi_major_px,
        irregular,
        heterogeneous,
        boundary_amp,
        texture_amp,
        angle: rng.random_range(0.0..std::f64::consts::PI),
        contrast: rng.random_range(0.25..0.45),
    }
}

/// Render one slice of a node into a patch.
fn render_patch(
    _spec: &PhantomSpec,
    rng: &mut Rng,
    patient_id: &str,
    node_id: &str,
    slice_index: usize,
    plan: &NodePlan,
    scale: f64,
) -> PatchRecord {
    let size = PATCH_SIZE;
    let half = size as f64 / 2.0;

    // Structured background: gradient + quadratic field + one tissue band.
    let base = rng.random_range(0.25..0.4);
    let gx = rng.random_range(-0.08..0.08);
    let gy = rng.random_range(-0.08..0.08);
    let qx = rng.random_range(-0.05..0.05);
    let qy = rng.random_range(-0.05..0.05);
    let band_amp = rng.random_range(0.01..0.05);
    let band_freq = rng.random_range(0.5..1.5);
    let band_angle = rng.random_range(0.0..std::f64::consts::PI);
    let band_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise_sigma = rng.random_range(0.01..0.025);

    // Boundary perturbation harmonics (radius modulation).
    let harmonics: Vec<(f64, f64, f64)> = (2..=5)
        .map(|h| {
            (
                h as f64,
                plan.boundary_amp * rng.random_range(0.4..1.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();

    // Texture waves inside the node.
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(1.5..4.0),
                rng.random_range(0.0..std::f64::consts::PI),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();

    let cx = half + rng.random_range(-2.0..2.0);
    let cy = half + rng.random_range(-2.0..2.0);
    let (sin_a, cos_a) = plan.angle.sin_cos();
    let semi_major = plan.semi_major_px * scale;
    let semi_minor = plan.semi_minor_px * scale;
    let edge_width = 0.08;

    let noise = Normal::new(0.0, noise_sigma).expect("valid normal");
    let mut image = Array2::<f64>::zeros((size, size));
    let mut mask = Array2::<u8>::zeros((size, size));
    for i in 0..size {
        for j in 0..size {
            // Pixel centre in patch coordinates; rows are y, columns x.
            let y = i as f64 + 0.5;
            let x = j as f64 + 0.5;
            let u = (x - half) / half;
            let v = (y - half) / half;
            let band = band_amp
                * (std::f64::consts::TAU * band_freq * (u * band_angle.cos() + v * band_angle.sin()) + band_phase)
                    .sin();
            let mut value = base + gx * u + gy * v + qx * u * u + qy * v * v + band;

            // Elliptical polar coordinates with harmonic boundary modulation.
            let dx = x - cx;
            let dy = y - cy;
            let ex = (dx * cos_a + dy * sin_a) / semi_major;
            let ey = (-dx * sin_a + dy * cos_a) / semi_minor;
            let rho = (ex * ex + ey * ey).sqrt();
            let phi = ey.atan2(ex);
            let boundary: f64 = 1.0 + harmonics.iter().map(|&(h, a, p)| a * (h * phi + p).cos()).sum::<f64>();
            let rel = rho / boundary.max(0.3);

            if rel <= 1.0 {
                mask[[i, j]] = 1;
            }
            // Soft-edged intensity bump with intra-node texture.
            let edge = 1.0 / (1.0 + ((rel - 1.0) / edge_width).exp());
            if edge > 1e-4 {
                let texture: f64 = waves
                    .iter()
                    .map(|&(f, a, p)| (std::f64::consts::TAU * f * (u * a.cos() + v * a.sin()) / 2.0 + p).sin())
                    .sum::<f64>()
                    / 3.0;
                value += plan.contrast * edge * (1.0 + plan.texture_amp * texture);
            }
            value += noise.sample(rng);
            // Store at f32 precision so on-disk round trips are lossless.
            image[[i, j]] = (value.clamp(0.0, 1.0) as f32) as f64;
        }
    }

    // A node must never rasterize to an empty mask; the smallest specimens
    // cover the centre pixel by construction, this is a guard.
    if mask.iter().all(|&v| v == 0) {
        mask[[size / 2, size / 2]] = 1;
    }

    PatchRecord {
        image,
        mask,
        patient_id: patient_id.to_string(),
        node_id: node_id.to_string(),
        slice_index,
        is_padding: false,
    }
}

fn sample_truncated_normal(rng: &mut Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("valid normal");
    loop {
        let v = normal.sample(rng);
        if v >= lo && v <= hi {
            return v;
        }
    }
}

fn sample_categorical(rng: &mut Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if x < *p {
            return i;
        }
        x -= p;
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_count_matches_fraction() {
        let spec = PhantomSpec { n_patients: 168, positive_fraction: 0.22, seed: 7, ..PhantomSpec::default() };
        let corpus = generate_phantom_corpus(&spec).unwrap();
        let positives = corpus.bags.iter().filter(|b| b.label == 1).count();
        assert_eq!(positives, 37); // round(168 * 0.22)
        assert_eq!(corpus.manifest.n_positive, 37);
    }

    #[test]
    fn forced_large_node_is_positive() {
        let spec = PhantomSpec {
            n_patients: 1,
            force_single_node: Some(ForcedNode { short_axis_mm: 10.0, irregular: false, heterogeneous: false }),
            ..PhantomSpec::default()
        };
        let corpus = generate_phantom_corpus(&spec).unwrap();
        assert_eq!(corpus.bags[0].label, 1);
    }

    #[test]
    fn forced_small_smooth_node_is_negative() {
        let spec = PhantomSpec {
            n_patients: 1,
            force_single_node: Some(ForcedNode { short_axis_mm: 4.0, irregular: false, heterogeneous: false }),
            ..PhantomSpec::default()
        };
        let corpus = generate_phantom_corpus(&spec).unwrap();
        assert_eq!(corpus.bags[0].label, 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = PhantomSpec { n_patients: 6, ..PhantomSpec::default() };
        let a = generate_phantom_corpus(&spec).unwrap();
        let b = generate_phantom_corpus(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bags_respect_patch_budget_and_validate() {
        let spec = PhantomSpec { n_patients: 20, seed: 3, ..PhantomSpec::default() };
        let corpus = generate_phantom_corpus(&spec).unwrap();
        for bag in &corpus.bags {
            assert!(!bag.patches.is_empty());
            bag.validate(15).unwrap();
        }
    }

    #[test]
    fn split_partitions_patients() {
        let spec = PhantomSpec { n_patients: 40, seed: 9, ..PhantomSpec::default() };
        let corpus = generate_phantom_corpus(&spec).unwrap();
        let ids: Vec<String> = corpus.bags.iter().map(|b| b.patient_id.clone()).collect();
        corpus.manifest.split.validate(&ids).unwrap();
        let n_train = corpus.manifest.split.train.len();
        assert!((n_train as f64 / 40.0 - 0.65).abs() < 0.08);
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = PhantomSpec { positive_fraction: 1.5, ..PhantomSpec::default() };
        assert!(matches!(generate_phantom_corpus(&spec), Err(LnmError::Config(_))));
    }
}
