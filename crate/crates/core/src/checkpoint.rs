//! Versioned JSON checkpoints and JSON-lines history files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphDims;
use crate::nn::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Model weights with everything needed to rebuild the architecture.
/// `params` lists every tensor by name in registration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub format_version: u32,
    pub kind: String,
    pub dims: GraphDims,
    pub config: C,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub params: ParamStore,
}

impl<C: Serialize + DeserializeOwned> Checkpoint<C> {
    pub fn new(kind: &str, dims: GraphDims, config: C, seed: u64, params: ParamStore) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            dims,
            config,
            seed,
            config_hash: None,
            params,
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", self.format_version)));
        }
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, l)| {
            serde_json::from_str(l).map_err(|e| Error::InvalidArgument(format!("{} line {}: {e}", path.display(), k + 1)))
        })
        .collect()
}
