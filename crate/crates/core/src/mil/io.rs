//! Classifier model files: versioned header plus raw tensors.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::model::{AblationSpec, MilConfig, MilModel, INPUT_LAYOUT_VERSION};
use crate::error::{LnmError, Result};

const MAGIC: &[u8; 4] = b"LNMM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MilHeader {
    pub config: MilConfig,
    pub spec: AblationSpec,
    pub latent_dim: usize,
    /// Patient-input ordering version; readers must reject unknown layouts.
    pub input_layout_version: u32,
    pub best_test_auc: f64,
}

impl MilHeader {
    pub fn new(model: &MilModel, best_test_auc: f64) -> Self {
        MilHeader {
            config: model.config.clone(),
            spec: model.spec,
            latent_dim: model.latent_dim,
            input_layout_version: INPUT_LAYOUT_VERSION,
            best_test_auc,
        }
    }
}

pub fn save_mil_model(model: &MilModel, header: &MilHeader, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    let header_json = serde_json::to_vec(header)?;
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    let tensors = model.collect_state();
    bytes.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in &tensors {
        bytes.extend_from_slice(&(t.ndim() as u64).to_le_bytes());
        for &d in t.shape() {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load_mil_model(path: &Path) -> Result<(MilModel, MilHeader)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| LnmError::Ingestion(format!("cannot read model file {}: {e}", path.display())))?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(LnmError::Ingestion("model file truncated".into()));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    if take(&mut at, 4)? != MAGIC {
        return Err(LnmError::Ingestion("not a classifier model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(LnmError::Ingestion(format!("unsupported model file version {version}")));
    }
    let hlen = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
    let header: MilHeader = serde_json::from_slice(take(&mut at, hlen)?)
        .map_err(|e| LnmError::Ingestion(format!("malformed model header: {e}")))?;
    if header.input_layout_version != INPUT_LAYOUT_VERSION {
        return Err(LnmError::Ingestion(format!(
            "unsupported input layout version {}",
            header.input_layout_version
        )));
    }
    let n_tensors = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let ndim = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let raw = take(&mut at, len * 8)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(
            ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| LnmError::Ingestion(format!("bad tensor shape in model file: {e}")))?,
        );
    }
    let mut model = MilModel::new(&header.config, &header.spec, header.latent_dim)?;
    model.apply_state(tensors)?;
    Ok((model, header))
}
