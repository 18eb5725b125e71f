//! Versioned binary checkpoints.
//!
//! Layout: magic, format version, JSON header (config, loss weights,
//! schedule, epoch, metric snapshot, RNG position), then every model tensor
//! as shape + little-endian f64 payload. Reloading reproduces forward passes
//! bit-identically.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::loss::{AnnealSchedule, LossWeights};
use super::model::{ConvVae, VaeConfig};
use super::train::EpochMetrics;
use crate::error::{LnmError, Result};
use crate::rng::RngState;

const MAGIC: &[u8; 4] = b"LNMC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: VaeConfig,
    pub weights: LossWeights,
    pub schedule: AnnealSchedule,
    pub epoch: usize,
    pub best_test_ssim: f64,
    pub last_metrics: Option<EpochMetrics>,
    pub rng_state: Option<RngState>,
}

pub fn save_checkpoint(model: &ConvVae, header: &CheckpointHeader, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    let header_json = serde_json::to_vec(header)?;
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);

    let tensors = model.collect_state();
    bytes.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in &tensors {
        let shape = t.shape();
        bytes.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &d in shape {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ConvVae, CheckpointHeader)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| LnmError::Ingestion(format!("cannot read checkpoint {}: {e}", path.display())))?;

    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > bytes.len() {
            return Err(LnmError::Ingestion("checkpoint truncated".into()));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };

    if take(&mut cursor, 4)? != MAGIC {
        return Err(LnmError::Ingestion("not a model checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(LnmError::Ingestion(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(&mut cursor, header_len)?)
        .map_err(|e| LnmError::Ingestion(format!("malformed checkpoint header: {e}")))?;

    let n_tensors = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let ndim = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let raw = take(&mut cursor, len * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(
            ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| LnmError::Ingestion(format!("bad tensor shape in checkpoint: {e}")))?,
        );
    }

    let mut model = ConvVae::new(&header.config)?;
    model.apply_state(tensors)?;
    Ok((model, header))
}
