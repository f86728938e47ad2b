//! Checkpoint persistence: a versioned JSON header followed by the flat
//! little-endian float32 parameter block. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Model, ParameterVector};

const MAGIC: &[u8; 8] = b"AMTFTCKP";
const FORMAT_VERSION: u32 = 1;

/// Which reward schedule produced a policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoleTag {
    /// Cooperative schedule (joint reward).
    C,
    /// Selfish schedule.
    D,
    /// Off-policy Q model.
    Q,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub role: RoleTag,
    pub player: usize,
    pub seed: u64,
    /// Snapshot of the producing configuration.
    pub config: serde_json::Value,
    /// Mean rewards of the final training batches, if any.
    pub curve_tail: Vec<f64>,
}

/// A trained policy/value head with provenance metadata.
#[derive(Clone, Debug)]
pub struct PolicyArtifact {
    pub model: Model,
    pub params: ParameterVector,
    pub meta: ArtifactMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: Model,
    meta: ArtifactMeta,
    param_version: u32,
}

pub fn save_artifact(path: &Path, artifact: &PolicyArtifact) -> Result<()> {
    artifact.model.check_params(&artifact.params)?;
    let header = Header {
        model: artifact.model.clone(),
        meta: artifact.meta.clone(),
        param_version: artifact.params.version,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(&(artifact.params.len() as u64).to_le_bytes())?;
    for &v in &artifact.params.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_artifact(path: &Path) -> Result<PolicyArtifact> {
    let mut r = BufReader::new(
        File::open(path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?,
    );
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let expected = header.model.layout().total;
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match manifest total {expected}"
        )));
    }
    let mut data = Vec::with_capacity(count);
    let mut f32buf = [0u8; 4];
    for _ in 0..count {
        r.read_exact(&mut f32buf)?;
        data.push(f32::from_le_bytes(f32buf) as f64);
    }
    let params = ParameterVector {
        version: header.param_version,
        data,
    };
    if !params.all_finite() {
        return Err(Error::NonFinite {
            context: format!("checkpoint {}", path.display()),
        });
    }
    Ok(PolicyArtifact {
        model: header.model,
        params,
        meta: header.meta,
    })
}
