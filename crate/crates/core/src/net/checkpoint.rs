//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "OZNET\0\0\1"
//! version  u32
//! hlen     u32      length of the JSON header
//! header   hlen     {"config": NetConfig, "metadata": {..}, "manifest": [{"name", "shape"}]}
//! tensors  f32 LE   concatenated in manifest order
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NetConfig, NetError, NetParams};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"OZNET\0\0\x01";

/// Free-form key-value annotations (generation index, gate result, ...).
pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams<f32>,
    pub metadata: Metadata,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    metadata: Metadata,
    manifest: Vec<ManifestEntry>,
}

pub fn save_checkpoint(params: &NetParams<f32>, metadata: &Metadata) -> Vec<u8> {
    let tensors = params.tensors();
    let header = Header {
        config: params.config,
        metadata: metadata.clone(),
        manifest: tensors.iter().map(|t| ManifestEntry { name: t.name.clone(), shape: t.shape.clone() }).collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let floats: usize = tensors.iter().map(|t| t.data.len()).sum();
    let mut out = Vec::with_capacity(16 + header.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in &tensors {
        for x in t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], NetError> {
    if bytes.len() < n {
        return Err(NetError::Truncated);
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32, NetError> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().expect("4 bytes")))
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint, NetError> {
    let mut rest = bytes;
    let magic = take(&mut rest, MAGIC.len())?;
    if magic != MAGIC {
        return Err(NetError::BadMagic);
    }
    let version = read_u32(&mut rest)?;
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let hlen = read_u32(&mut rest)? as usize;
    let header: Header =
        serde_json::from_slice(take(&mut rest, hlen)?).map_err(|e| NetError::Malformed(e.to_string()))?;
    let mut params = NetParams::<f32>::zeros(header.config)?;
    {
        let mut tensors = params.tensors_mut();
        if tensors.len() != header.manifest.len() {
            return Err(NetError::Manifest(format!(
                "{} tensors listed, config implies {}",
                header.manifest.len(),
                tensors.len()
            )));
        }
        for (t, entry) in tensors.iter_mut().zip(&header.manifest) {
            let count: usize = entry.shape.iter().product();
            if t.name != entry.name || count != t.data.len() {
                return Err(NetError::Manifest(format!("{} {:?} does not match {}", entry.name, entry.shape, t.name)));
            }
            let raw = take(&mut rest, 4 * count)?;
            for (x, chunk) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
                *x = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
    }
    if !rest.is_empty() {
        return Err(NetError::Malformed(format!("{} trailing bytes", rest.len())));
    }
    if !params.all_finite() {
        return Err(NetError::Malformed("non-finite parameter".into()));
    }
    Ok(Checkpoint { params, metadata: header.metadata })
}

/// Loads and checks that the stored architecture is the expected one.
pub fn load_checkpoint_expecting(bytes: &[u8], expected: &NetConfig) -> Result<Checkpoint, NetError> {
    let ck = load_checkpoint(bytes)?;
    let found = ck.params.config;
    if (found.residual_blocks, found.filters, found.value_hidden)
        != (expected.residual_blocks, expected.filters, expected.value_hidden)
    {
        let expected_names: Vec<_> = NetParams::<f32>::zeros(*expected)?.tensors().iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
        let found_names: Vec<_> = ck.params.tensors().iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
        let first = expected_names
            .iter()
            .zip(found_names.iter().map(Some).chain(std::iter::repeat(None)))
            .find(|(e, f)| Some(*e) != *f)
            .map(|(e, _)| format!("expected tensor {} {:?}", e.0, e.1))
            .unwrap_or_else(|| format!("{} tensors stored, {} expected", found_names.len(), expected_names.len()));
        return Err(NetError::Manifest(first));
    }
    Ok(ck)
}

impl Checkpoint {
    pub fn new(params: NetParams<f32>) -> Self {
        Checkpoint { params, metadata: Metadata::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        save_checkpoint(&self.params, &self.metadata)
    }

    /// Hex SHA-256 of the serialized checkpoint; identifies a parameter set.
    pub fn hash(&self) -> String {
        hash_bytes(&self.to_bytes())
    }

    /// Writes to a sibling temporary file and renames it into place, so readers
    /// never observe a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        load_checkpoint(&fs::read(path)?)
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = NetConfig { residual_blocks: 2, filters: 4, value_hidden: 8, l2: 1e-4 };
        let mut params = NetParams::init(cfg, 11).unwrap();
        params.stem.running_var[1] = 0.123_456_79;
        let mut metadata = Metadata::new();
        metadata.insert("generation".into(), "3".into());
        Checkpoint { params, metadata }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = load_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.tensors().iter().zip(ck.params.tensors()) {
            assert!(a.data.iter().zip(b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn every_truncation_is_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 5, 12, 15, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(load_checkpoint(&bytes[..cut]), Err(NetError::Truncated)), "cut {cut}");
        }
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 99;
        assert!(matches!(load_checkpoint(&bytes), Err(NetError::Version { found: 99, .. })));
    }

    #[test]
    fn wrong_architecture_is_a_manifest_error() {
        let bytes = sample().to_bytes();
        let expected = NetConfig { residual_blocks: 4, filters: 4, value_hidden: 8, l2: 1e-4 };
        assert!(matches!(load_checkpoint_expecting(&bytes, &expected), Err(NetError::Manifest(_))));
        let same = NetConfig { l2: 0.0, ..expected };
        let same = NetConfig { residual_blocks: 2, ..same };
        assert!(load_checkpoint_expecting(&bytes, &same).is_ok());
    }

    #[test]
    fn hash_is_stable() {
        let ck = sample();
        assert_eq!(ck.hash(), ck.clone().hash());
        assert_eq!(ck.hash().len(), 64);
    }
}
