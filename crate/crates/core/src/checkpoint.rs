//! Versioned JSON checkpoint container for trained models.
//!
//! An autoencoder checkpoint is identified by the SHA-256 of its model
//! payload. A flow checkpoint records that identifier so latents are never
//! interpreted by the wrong encoder.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::AutoencoderModel;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::io::{read_json, write_json};

pub const CHECKPOINT_FORMAT: &str = "paramflow-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Autoencoder {
        model: AutoencoderModel,
    },
    Flow {
        model: FlowModel,
        ae_fingerprint: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// SHA-256 of the serialized model.
    pub fingerprint: String,
    #[serde(flatten)]
    pub payload: Payload,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the canonical JSON encoding of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value).map_err(|e| Error::Format(e.to_string()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl Checkpoint {
    pub fn autoencoder(model: AutoencoderModel) -> Result<Self> {
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            fingerprint: fingerprint(&model)?,
            payload: Payload::Autoencoder { model },
        })
    }

    /// Bundles a flow with a reference to the autoencoder it was trained on.
    pub fn flow(model: FlowModel, ae: &AutoencoderModel) -> Result<Self> {
        if model.latent_dim() != ae.latent_dim() {
            return Err(Error::Conflict(format!(
                "flow latent dim {} does not match autoencoder latent dim {}",
                model.latent_dim(),
                ae.latent_dim()
            )));
        }
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            fingerprint: fingerprint(&model)?,
            payload: Payload::Flow {
                model,
                ae_fingerprint: fingerprint(ae)?,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads and verifies format, version and fingerprint.
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = read_json(path)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "{}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        let actual = match &ck.payload {
            Payload::Autoencoder { model } => {
                model.validate()?;
                fingerprint(model)?
            }
            Payload::Flow { model, .. } => {
                model.validate()?;
                fingerprint(model)?
            }
        };
        if actual != ck.fingerprint {
            return Err(Error::Format(format!(
                "{}: fingerprint mismatch",
                path.display()
            )));
        }
        Ok(ck)
    }

    pub fn into_autoencoder(self) -> Result<AutoencoderModel> {
        match self.payload {
            Payload::Autoencoder { model } => Ok(model),
            Payload::Flow { .. } => Err(Error::Usage(
                "expected an autoencoder checkpoint, found a flow".into(),
            )),
        }
    }

    /// Returns the flow after checking it references `ae`.
    pub fn into_flow_for(self, ae: &AutoencoderModel) -> Result<FlowModel> {
        match self.payload {
            Payload::Flow {
                model,
                ae_fingerprint,
            } => {
                let expected = fingerprint(ae)?;
                if ae_fingerprint != expected {
                    return Err(Error::Conflict(format!(
                        "flow was trained against autoencoder {ae_fingerprint}, not {expected}"
                    )));
                }
                Ok(model)
            }
            Payload::Autoencoder { .. } => Err(Error::Usage(
                "expected a flow checkpoint, found an autoencoder".into(),
            )),
        }
    }

    pub fn ae_fingerprint(&self) -> Option<&str> {
        match &self.payload {
            Payload::Flow { ae_fingerprint, .. } => Some(ae_fingerprint),
            Payload::Autoencoder { .. } => None,
        }
    }
}
