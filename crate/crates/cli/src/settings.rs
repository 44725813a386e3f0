use std::path::Path;

use paramflow::config::PipelineConfig;
use paramflow::io::read_bytes;
use paramflow::{Error, Result};

use crate::{Common, Preset};

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Preset, then the TOML file layered on top, then the seed flag.
pub fn load(common: &Common) -> Result<PipelineConfig> {
    let mut config = match common.preset {
        Preset::Default => PipelineConfig::default(),
        Preset::Reference => PipelineConfig::reference(),
    };
    if let Some(path) = &common.config {
        config = overlay(&config, path)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn overlay(base: &PipelineConfig, path: &Path) -> Result<PipelineConfig> {
    let text = String::from_utf8(read_bytes(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let over: toml::Value =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut merged = toml::Value::try_from(base)
        .map_err(|e| Error::Config(format!("serializing preset: {e}")))?;
    merge(&mut merged, over);
    merged
        .try_into()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
