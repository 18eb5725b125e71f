//! Corpus storage: `manifest.json` plus one binary pixel file per patient.
//!
//! Pixel files hold the stacked patch images then masks as little-endian
//! 32-bit floats. The manifest records a SHA-256 checksum per pixel file;
//! loading verifies it and names the offending patient on any mismatch.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{CohortManifest, Corpus, PatchRecord, PatientBag, PATCH_SIZE};
use crate::error::{LnmError, Result};

const PATCH_MAGIC: &[u8; 4] = b"LNPB";
const PATCH_VERSION: u32 = 1;

/// Write `corpus` under `dir` (created if missing).
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("patients"))?;

    let mut manifest = corpus.manifest.clone();
    for (bag, meta) in corpus.bags.iter().zip(manifest.patients.iter_mut()) {
        if bag.patient_id != meta.patient_id {
            return Err(LnmError::Validation(format!(
                "manifest order disagrees with bag order at patient {}",
                bag.patient_id
            )));
        }
        let bytes = encode_patches(&bag.patches);
        meta.checksum = hex_digest(&bytes);
        let mut f = fs::File::create(dir.join(&meta.patch_file))?;
        f.write_all(&bytes)?;
    }

    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Read a corpus previously written by [`save_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.json");
    let json = fs::read_to_string(&manifest_path).map_err(|e| {
        LnmError::Ingestion(format!("missing manifest at {}: {e}", manifest_path.display()))
    })?;
    let manifest: CohortManifest = serde_json::from_str(&json)
        .map_err(|e| LnmError::Ingestion(format!("malformed manifest: {e}")))?;

    let mut bags = Vec::with_capacity(manifest.patients.len());
    for meta in &manifest.patients {
        let path = dir.join(&meta.patch_file);
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| {
                LnmError::Ingestion(format!("patient {}: cannot read {}: {e}", meta.patient_id, path.display()))
            })?;
        if hex_digest(&bytes) != meta.checksum {
            return Err(LnmError::Ingestion(format!(
                "patient {}: checksum mismatch for {}",
                meta.patient_id, meta.patch_file
            )));
        }
        let patches = decode_patches(&bytes, meta.patient_id.as_str(), &meta.patch_index)?;
        bags.push(PatientBag {
            patient_id: meta.patient_id.clone(),
            patches,
            age: meta.age,
            sex: meta.sex,
            t_stage: meta.t_stage,
            label: meta.label,
            is_synthetic: meta.is_synthetic,
            parent_id: meta.parent_id.clone(),
            nodes: meta.nodes.clone(),
        });
    }
    Ok(Corpus { bags, manifest })
}

fn encode_patches(patches: &[PatchRecord]) -> Vec<u8> {
    let n = patches.len();
    let plane = PATCH_SIZE * PATCH_SIZE;
    let mut bytes = Vec::with_capacity(12 + n * plane * 8);
    bytes.extend_from_slice(PATCH_MAGIC);
    bytes.extend_from_slice(&PATCH_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    for p in patches {
        for v in p.image.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    for p in patches {
        for v in p.mask.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    bytes
}

fn decode_patches(bytes: &[u8], patient_id: &str, index: &[(String, usize)]) -> Result<Vec<PatchRecord>> {
    let plane = PATCH_SIZE * PATCH_SIZE;
    let bad = |msg: &str| LnmError::Ingestion(format!("patient {patient_id}: {msg}"));
    if bytes.len() < 12 || &bytes[..4] != PATCH_MAGIC {
        return Err(bad("pixel file header is malformed"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != PATCH_VERSION {
        return Err(bad(&format!("unsupported pixel file version {version}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n != index.len() {
        return Err(bad(&format!("patch count {n} disagrees with manifest ({})", index.len())));
    }
    let expected = 12 + 2 * n * plane * 4;
    if bytes.len() != expected {
        return Err(bad(&format!("pixel file has {} bytes, expected {expected}", bytes.len())));
    }

    let read_plane = |offset: usize| -> Array2<f64> {
        Array2::from_shape_fn((PATCH_SIZE, PATCH_SIZE), |(i, j)| {
            let at = offset + (i * PATCH_SIZE + j) * 4;
            f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64
        })
    };

    let mut patches = Vec::with_capacity(n);
    for (k, (node_id, slice_index)) in index.iter().enumerate() {
        let image = read_plane(12 + k * plane * 4);
        let mask_f = read_plane(12 + (n + k) * plane * 4);
        let mut mask = Array2::<u8>::zeros((PATCH_SIZE, PATCH_SIZE));
        for (m, &v) in mask.iter_mut().zip(mask_f.iter()) {
            if v != 0.0 && v != 1.0 {
                return Err(bad("mask plane contains non-binary values"));
            }
            *m = v as u8;
        }
        let is_padding = node_id.is_empty();
        let record = PatchRecord {
            image,
            mask,
            patient_id: patient_id.to_string(),
            node_id: node_id.clone(),
            slice_index: *slice_index,
            is_padding,
        };
        record.validate().map_err(|e| bad(&format!("patch {k}: {e}")))?;
        patches.push(record);
    }
    Ok(patches)
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_phantom_corpus, PhantomSpec};

    fn small_corpus(seed: u64) -> Corpus {
        generate_phantom_corpus(&PhantomSpec { n_patients: 5, seed, ..PhantomSpec::default() }).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let corpus = small_corpus(11);
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(corpus.bags, loaded.bags);
        assert_eq!(corpus.manifest.seed, loaded.manifest.seed);
        assert_eq!(corpus.manifest.split, loaded.manifest.split);
    }

    #[test]
    fn manifest_records_spec_seed() {
        let corpus = small_corpus(1234);
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.manifest.seed, 1234);
    }

    #[test]
    fn missing_patch_file_names_patient() {
        let corpus = small_corpus(2);
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let victim = &corpus.bags[2].patient_id;
        fs::remove_file(dir.path().join(format!("patients/{victim}.bin"))).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(err.to_string().contains(victim.as_str()), "error should name {victim}: {err}");
    }

    #[test]
    fn corrupted_patch_file_fails_checksum() {
        let corpus = small_corpus(3);
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let victim = &corpus.bags[0].patient_id;
        let path = dir.path().join(format!("patients/{victim}.bin"));
        let mut bytes = fs::read(&path).unwrap();
        let at = bytes.len() / 2;
        bytes[at] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "unexpected error: {err}");
        assert!(err.to_string().contains(victim.as_str()));
    }

    #[test]
    fn save_is_byte_deterministic() {
        let a = small_corpus(5);
        let b = small_corpus(5);
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        save_corpus(&a, da.path()).unwrap();
        save_corpus(&b, db.path()).unwrap();
        let ma = fs::read(da.path().join("manifest.json")).unwrap();
        let mb = fs::read(db.path().join("manifest.json")).unwrap();
        assert_eq!(ma, mb);
        for bag in &a.bags {
            let fa = fs::read(da.path().join(format!("patients/{}.bin", bag.patient_id))).unwrap();
            let fb = fs::read(db.path().join(format!("patients/{}.bin", bag.patient_id))).unwrap();
            assert_eq!(fa, fb);
        }
    }
}
