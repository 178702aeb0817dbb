use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bptt::TrainConfig;
use crate::datapipe::{FittedPipeline, PreprocessConfig};
use crate::error::{Error, Result};
use crate::float17;
use crate::lru::{LruNetwork, NetworkConfig};
use crate::optim::AdamState;

pub const FORMAT_VERSION: u64 = 1;

/// Where and when an artifact was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command_line: Vec<String>,
    /// RFC 3339, UTC.
    pub timestamp: String,
}

impl Provenance {
    /// Current process arguments and wall-clock time.
    pub fn capture() -> Self {
        Self {
            command_line: std::env::args().collect(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// Fixed provenance, for reproducible files.
    pub fn fixed(label: &str) -> Self {
        Self {
            command_line: vec![label.to_string()],
            timestamp: "1970-01-01T00:00:00Z".into(),
        }
    }
}

/// Everything needed to resume or deploy a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u64,
    pub network_config: NetworkConfig,
    pub network: LruNetwork,
    pub optimizer: Option<AdamState>,
    pub pipeline: FittedPipeline,
    pub preprocess: PreprocessConfig,
    pub train_config: TrainConfig,
    pub seed: u64,
    #[serde(with = "float17::option")]
    pub best_val_loss: Option<f64>,
    pub best_step: Option<usize>,
    pub provenance: Provenance,
}

impl Checkpoint {
    /// Canonical text form: pretty JSON, fixed field order, every network
    /// and optimizer value with 17 significant digits, trailing newline.
    pub fn to_canonical_string(&self) -> Result<String> {
        if !self.network.is_finite() {
            return Err(Error::Training {
                batch: self.best_step.unwrap_or(0),
                message: "refusing to serialize non-finite parameters".into(),
            });
        }
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("cannot encode checkpoint: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        let version = probe
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse {
                offset: 0,
                message: "missing or invalid format_version".into(),
            })?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        ckpt.network.validate()?;
        if let Some(opt) = &ckpt.optimizer {
            if opt.len() != ckpt.network.num_params() {
                return Err(Error::Compatibility(format!(
                    "optimizer holds {} moments for {} parameters",
                    opt.len(),
                    ckpt.network.num_params()
                )));
            }
        }
        Ok(ckpt)
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn parse_error(text: &str, e: &serde_json::Error) -> Error {
    let offset = if e.line() == 0 {
        text.len()
    } else {
        let line_start: usize = text
            .split_inclusive('\n')
            .take(e.line() - 1)
            .map(str::len)
            .sum();
        (line_start + e.column().saturating_sub(1)).min(text.len())
    };
    Error::Parse {
        offset,
        message: e.to_string(),
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_canonical_string()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_text(&fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)
}
