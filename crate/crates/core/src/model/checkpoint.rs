use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, MultiScaleNet};
use crate::dataset::IptClass;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 hex digest of a value's JSON serialization.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// On-disk model: parameters, architecture and class order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub class_order: Vec<String>,
    pub config: ModelConfig,
    pub config_hash: String,
    pub epoch: Option<usize>,
    pub val_f1: Option<f64>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(net: &MultiScaleNet, epoch: Option<usize>, val_f1: Option<f64>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            class_order: IptClass::ALL.iter().map(|c| c.name().to_string()).collect(),
            config: net.config().clone(),
            config_hash: net.config().hash(),
            epoch,
            val_f1,
            params: net.params().clone(),
        }
    }

    pub fn into_net(self) -> Result<MultiScaleNet> {
        MultiScaleNet::from_params(self.config, self.params)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string(ckpt).map_err(|e| Error::Serde(e.to_string()))?;
    // Write then rename so a crash never leaves a truncated checkpoint.
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, optionally requiring a specific architecture.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    let order: Vec<String> = IptClass::ALL.iter().map(|c| c.name().to_string()).collect();
    if ckpt.class_order != order {
        return Err(Error::Checkpoint(format!("class order {:?} differs from {order:?}", ckpt.class_order)));
    }
    if ckpt.config.hash() != ckpt.config_hash {
        return Err(Error::Checkpoint("stored config hash does not match stored config".into()));
    }
    if let Some(cfg) = expected {
        if cfg != &ckpt.config {
            return Err(Error::Checkpoint(format!(
                "checkpoint config {} does not match requested config {}",
                ckpt.config_hash,
                cfg.hash()
            )));
        }
    }
    Ok(ckpt)
}
