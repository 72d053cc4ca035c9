//! Checkpoints: one JSON header line, then the flat parameters (and the
//! previous round's aggregate, when present) as little-endian f64.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{Architecture, LayerInfo, ModelState};

const FORMAT: &str = "hefl-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub arch: Architecture,
    pub layout: Vec<LayerInfo>,
    /// Last completed round.
    pub round: usize,
    /// Digest of the run configuration, checked on resume.
    pub config_digest: String,
    pub has_previous_aggregate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub round: usize,
    pub config_digest: String,
    pub model: ModelState,
    pub previous_aggregate: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            format: FORMAT.into(),
            version: VERSION,
            arch: *self.model.arch(),
            layout: self.model.layers().to_vec(),
            round: self.round,
            config_digest: self.config_digest.clone(),
            has_previous_aggregate: self.previous_aggregate.is_some(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        let aux = self.previous_aggregate.as_deref().unwrap_or(&[]);
        for v in self.model.flat().iter().chain(aux) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CoreError::Format("checkpoint has no header line".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| CoreError::Format(format!("checkpoint header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(CoreError::Format(format!(
                "not a version {VERSION} checkpoint ({} v{})",
                header.format, header.version
            )));
        }
        if header.layout != header.arch.layers() {
            return Err(CoreError::Format(
                "checkpoint layout does not match its architecture".into(),
            ));
        }
        let n = header.arch.parameter_count();
        let blob = &bytes[nl + 1..];
        let want = n * 8 * if header.has_previous_aggregate { 2 } else { 1 };
        if blob.len() != want {
            return Err(CoreError::Format(format!(
                "checkpoint payload is {} bytes, expected {want}",
                blob.len()
            )));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let (flat, aux) = values.split_at(n);
        Ok(Self {
            round: header.round,
            config_digest: header.config_digest,
            model: ModelState::from_flat(header.arch, flat.to_vec())?,
            previous_aggregate: header.has_previous_aggregate.then(|| aux.to_vec()),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    let mut f = std::fs::File::create(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CoreError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CoreError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}
