//! Checkpoint serialization: named arrays, optimizer state, RNG state, and a
//! step counter in one JSON document.

use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::optim::{Adam, Params};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Serializable RNG state (ChaCha8 seed plus stream position).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    /// u128 word position stored in decimal to stay JSON-safe.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed();
        RngState {
            seed_hex: seed.iter().map(|b| format!("{:02x}", b)).collect(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        if self.seed_hex.len() != 64 {
            return Err(Error::Config("rng seed must be 32 bytes of hex".into()));
        }
        let mut seed = [0u8; 32];
        for (i, chunk) in self.seed_hex.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk)
                .map_err(|_| Error::Config("invalid rng seed hex".into()))?;
            seed[i] =
                u8::from_str_radix(s, 16).map_err(|_| Error::Config("invalid rng seed hex".into()))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Config("invalid rng word position".into()))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Full training state snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub dtype: String,
    pub step: u64,
    pub params: Params,
    pub optimizer: Option<Adam>,
    pub rng: Option<RngState>,
    /// Owner-defined configuration block (model config, hashes, ...).
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(params: Params) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            dtype: "f64".to_string(),
            step: 0,
            params,
            optimizer: None,
            rng: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.params.all_finite() {
            return Err(Error::Divergence {
                step: self.step,
                loss: f64::NAN,
            });
        }
        let json = serde_json::to_string(self)?;
        write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::UpstreamMissing(format!("checkpoint {}: {}", path.display(), e))
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: CHECKPOINT_SCHEMA_VERSION,
                found: ckpt.schema_version,
            });
        }
        if ckpt.dtype != "f64" {
            return Err(Error::Config(format!(
                "unsupported checkpoint dtype {:?}",
                ckpt.dtype
            )));
        }
        Ok(ckpt)
    }
}

/// Write-temp-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
