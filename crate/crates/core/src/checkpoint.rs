//! Versioned model checkpoints: configuration plus trained state as JSON.
//!
//! Floating-point values are written with the shortest decimal that parses
//! back to the same bits, so a save/load cycle is lossless and two runs
//! that produce the same state produce byte-identical files.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{GlobalState, ModelConfig};

const FORMAT: &str = "glda-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    state: GlobalState,
}

pub fn save(path: &Path, config: &ModelConfig, state: &GlobalState) -> Result<()> {
    state.validate(config)?;
    let checkpoint = Checkpoint {
        format: FORMAT.to_string(),
        version: VERSION,
        config: config.clone(),
        state: state.clone(),
    };
    let mut text = serde_json::to_string_pretty(&checkpoint)
        .map_err(|e| Error::numerical(format!("cannot serialize checkpoint: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelConfig, GlobalState)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, e.line(), e.to_string()))?;
    if checkpoint.format != FORMAT {
        return Err(Error::format(
            path,
            1,
            format!("not a model checkpoint (format {:?})", checkpoint.format),
        ));
    }
    if checkpoint.version != VERSION {
        return Err(Error::format(
            path,
            1,
            format!(
                "unsupported checkpoint version {} (expected {VERSION})",
                checkpoint.version
            ),
        ));
    }
    checkpoint.config.validate()?;
    checkpoint.state.validate(&checkpoint.config)?;
    Ok((checkpoint.config, checkpoint.state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svi;

    #[test]
    fn round_trip_is_bit_lossless() {
        let config = ModelConfig::with_defaults(3, 2, 25);
        let state = svi::init_state(&config, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&path, &config, &state).unwrap();
        let (config_back, state_back) = load(&path).unwrap();
        assert_eq!(config_back, config);
        for (a, b) in state_back.components.iter().zip(&state.components) {
            assert_eq!(a.qs.to_bits(), b.qs.to_bits());
            assert_eq!(a.qv.to_bits(), b.qv.to_bits());
            for (x, y) in a.qm.iter().zip(b.qm.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.qomega.iter().zip(b.qomega.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(state_back.t, state.t);
    }

    #[test]
    fn same_state_serializes_to_identical_bytes() {
        let config = ModelConfig::with_defaults(2, 2, 10);
        let state = svi::init_state(&config, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        save(&a, &config, &state).unwrap();
        save(&b, &config, &state).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn mangled_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{\"format\":\"other\"}").unwrap();
        assert!(load(&path).is_err());
        fs::write(&path, "not json").unwrap();
        assert!(load(&path).is_err());
    }
}
