//! Dataset data model, labeling oracle, phantom generation and storage.
//!
//! The corpus is a set of patient bags. Each bag holds up to
//! [`DEFAULT_MAX_PATCHES`] image/mask patches of segmented lymph nodes plus
//! clinical covariates and a binary nodal-stage label. Phantom corpora are
//! generated with [`generate_phantom_corpus`] and labeled by an explicit
//! oracle rule, so every downstream prediction can be checked against ground
//! truth.

mod io;
mod phantom;

pub use io::{load_corpus, save_corpus};
pub use phantom::{generate_phantom_corpus, ForcedNode, PhantomSpec};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{LnmError, Result};

/// Patch side length in pixels.
pub const PATCH_SIZE: usize = 32;

/// Default cap on patches per patient bag.
pub const DEFAULT_MAX_PATCHES: usize = 15;

/// Short-axis threshold (mm) above which a node is malignant regardless of
/// shape or texture. Generator constant, not a clinical claim.
pub const ORACLE_SIZE_MM: f64 = 8.0;

/// Short-axis threshold (mm) above which an irregular, heterogeneous node is
/// malignant. Generator constant, not a clinical claim.
pub const ORACLE_COMBINED_SIZE_MM: f64 = 5.0;

/// In-plane and through-plane voxel spacing in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpacing {
    pub in_plane_mm: f64,
    pub slice_mm: f64,
}

impl Default for VoxelSpacing {
    fn default() -> Self {
        VoxelSpacing { in_plane_mm: 0.573, slice_mm: 3.3 }
    }
}

impl VoxelSpacing {
    pub fn validate(&self) -> Result<()> {
        if self.in_plane_mm <= 0.0 || self.slice_mm <= 0.0 {
            return Err(LnmError::Config(format!(
                "voxel spacing must be strictly positive, got ({}, {})",
                self.in_plane_mm, self.slice_mm
            )));
        }
        Ok(())
    }
}

/// Patient sex covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

impl Sex {
    pub fn as_feature(&self) -> f64 {
        match self {
            Sex::M => 1.0,
            Sex::F => 0.0,
        }
    }
}

/// Primary tumour stage covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TStage {
    T1,
    T2,
    T3,
    T4,
}

impl TStage {
    pub fn one_hot(&self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }

    pub fn index(&self) -> usize {
        match self {
            TStage::T1 => 0,
            TStage::T2 => 1,
            TStage::T3 => 2,
            TStage::T4 => 3,
        }
    }
}

/// One 32x32 normalized image patch plus its binary segmentation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub image: Array2<f64>,
    pub mask: Array2<u8>,
    pub patient_id: String,
    pub node_id: String,
    pub slice_index: usize,
    pub is_padding: bool,
}

impl PatchRecord {
    /// All-zero image and mask, used to fill empty bag slots.
    pub fn zero_padding(patient_id: &str) -> Self {
        PatchRecord {
            image: Array2::zeros((PATCH_SIZE, PATCH_SIZE)),
            mask: Array2::zeros((PATCH_SIZE, PATCH_SIZE)),
            patient_id: patient_id.to_string(),
            node_id: String::new(),
            slice_index: 0,
            is_padding: true,
        }
    }

    pub fn mask_area(&self) -> usize {
        self.mask.iter().filter(|&&v| v > 0).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.dim() != (PATCH_SIZE, PATCH_SIZE) || self.mask.dim() != (PATCH_SIZE, PATCH_SIZE) {
            return Err(LnmError::Validation(format!(
                "patch {}/{} has shape {:?}, expected {}x{}",
                self.patient_id,
                self.node_id,
                self.image.dim(),
                PATCH_SIZE,
                PATCH_SIZE
            )));
        }
        if self.image.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(LnmError::Validation(format!(
                "patch {}/{} has image values outside [0,1]",
                self.patient_id, self.node_id
            )));
        }
        if self.mask.iter().any(|&v| v > 1) {
            return Err(LnmError::Validation(format!(
                "patch {}/{} has non-binary mask values",
                self.patient_id, self.node_id
            )));
        }
        if !self.is_padding && self.mask_area() == 0 {
            return Err(LnmError::Validation(format!(
                "patch {}/{} has an empty mask but is not padding",
                self.patient_id, self.node_id
            )));
        }
        Ok(())
    }
}

/// Generator-side description of one node; the oracle's input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: String,
    /// Target short-axis diameter in mm (minor Feret diameter of the drawn shape).
    pub short_axis_mm: f64,
    pub long_axis_mm: f64,
    pub irregular: bool,
    pub heterogeneous: bool,
    pub n_slices: usize,
}

impl NodeDescriptor {
    /// The documented oracle rule for a single node.
    pub fn is_malignant(&self) -> bool {
        self.short_axis_mm >= ORACLE_SIZE_MM
            || (self.short_axis_mm >= ORACLE_COMBINED_SIZE_MM && self.irregular && self.heterogeneous)
    }
}

/// A patient is positive iff at least one node satisfies the oracle rule.
pub fn oracle_label(nodes: &[NodeDescriptor]) -> u8 {
    u8::from(nodes.iter().any(NodeDescriptor::is_malignant))
}

/// A patient's patches, clinical covariates and binary N-stage label.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientBag {
    pub patient_id: String,
    pub patches: Vec<PatchRecord>,
    pub age: f64,
    pub sex: Sex,
    pub t_stage: TStage,
    /// 0 = no nodal spread, 1 = one or more malignant nodes.
    pub label: u8,
    pub is_synthetic: bool,
    /// For synthetic bags, the patient they were cloned from.
    pub parent_id: Option<String>,
    /// Generator metadata; empty for bags that did not come from the phantom generator.
    pub nodes: Vec<NodeDescriptor>,
}

impl PatientBag {
    pub fn real_patches(&self) -> impl Iterator<Item = &PatchRecord> {
        self.patches.iter().filter(|p| !p.is_padding)
    }

    pub fn validate(&self, max_patches: usize) -> Result<()> {
        if self.patches.len() > max_patches {
            return Err(LnmError::Validation(format!(
                "patient {} has {} patches, limit is {}",
                self.patient_id,
                self.patches.len(),
                max_patches
            )));
        }
        if self.label > 1 {
            return Err(LnmError::Validation(format!(
                "patient {} has non-binary label {}",
                self.patient_id, self.label
            )));
        }
        for p in &self.patches {
            p.validate()?;
        }
        Ok(())
    }
}

/// Train/test membership by patient id. Splits are always by patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    /// Every patient in exactly one split.
    pub fn validate(&self, all_ids: &[String]) -> Result<()> {
        use std::collections::BTreeSet;
        let train: BTreeSet<_> = self.train.iter().collect();
        let test: BTreeSet<_> = self.test.iter().collect();
        if let Some(dup) = train.intersection(&test).next() {
            return Err(LnmError::Validation(format!("patient {dup} appears in both splits")));
        }
        for id in all_ids {
            if !train.contains(id) && !test.contains(id) {
                return Err(LnmError::Validation(format!("patient {id} missing from split")));
            }
        }
        if train.len() + test.len() != all_ids.len() {
            return Err(LnmError::Validation("split mentions unknown patients".into()));
        }
        Ok(())
    }
}

/// Per-patient entry in the manifest: everything except pixel data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMeta {
    pub patient_id: String,
    pub age: f64,
    pub sex: Sex,
    pub t_stage: TStage,
    pub label: u8,
    pub is_synthetic: bool,
    pub parent_id: Option<String>,
    pub nodes: Vec<NodeDescriptor>,
    /// (node_id, slice_index) per stored patch, in file order.
    pub patch_index: Vec<(String, usize)>,
    /// Relative path of the pixel file under the corpus directory.
    pub patch_file: String,
    /// SHA-256 of the pixel file, hex.
    pub checksum: String,
}

/// Corpus-level metadata stored as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub format_version: u32,
    pub seed: u64,
    pub spacing: VoxelSpacing,
    pub split: SplitAssignment,
    pub n_positive: usize,
    pub n_negative: usize,
    pub patients: Vec<PatientMeta>,
}

/// Bags plus manifest; the unit the rest of the pipeline consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub bags: Vec<PatientBag>,
    pub manifest: CohortManifest,
}

impl Corpus {
    pub fn bag(&self, patient_id: &str) -> Option<&PatientBag> {
        self.bags.iter().find(|b| b.patient_id == patient_id)
    }

    pub fn train_bags(&self) -> Vec<&PatientBag> {
        self.select(&self.manifest.split.train)
    }

    pub fn test_bags(&self) -> Vec<&PatientBag> {
        self.select(&self.manifest.split.test)
    }

    fn select(&self, ids: &[String]) -> Vec<&PatientBag> {
        ids.iter().filter_map(|id| self.bag(id)).collect()
    }

    /// Recompute every stored label from the stored node descriptors.
    pub fn verify_oracle_consistency(&self) -> Result<()> {
        for bag in &self.bags {
            let expected = oracle_label(&bag.nodes);
            if expected != bag.label {
                return Err(LnmError::Validation(format!(
                    "patient {}: stored label {} disagrees with oracle {}",
                    bag.patient_id, bag.label, expected
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(short: f64, irregular: bool, heterogeneous: bool) -> NodeDescriptor {
        NodeDescriptor {
            node_id: "n0".into(),
            short_axis_mm: short,
            long_axis_mm: short * 1.4,
            irregular,
            heterogeneous,
            n_slices: 1,
        }
    }

    #[test]
    fn oracle_size_branch() {
        assert_eq!(oracle_label(&[node(10.0, false, false)]), 1);
        assert_eq!(oracle_label(&[node(8.0, false, false)]), 1);
    }

    #[test]
    fn oracle_combined_branch() {
        assert_eq!(oracle_label(&[node(5.0, true, true)]), 1);
        assert_eq!(oracle_label(&[node(5.0, true, false)]), 0);
        assert_eq!(oracle_label(&[node(5.0, false, true)]), 0);
        assert_eq!(oracle_label(&[node(4.0, true, true)]), 0);
    }

    #[test]
    fn oracle_no_branch_fires() {
        assert_eq!(oracle_label(&[node(4.0, false, false)]), 0);
        assert_eq!(oracle_label(&[]), 0);
    }

    #[test]
    fn split_rejects_overlap() {
        let split = SplitAssignment { train: vec!["a".into()], test: vec!["a".into()] };
        assert!(split.validate(&["a".into()]).is_err());
    }
}
