use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataio::text::{parse_key_values, read_to_string, require, write_string};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub const RUN_MANIFEST: &str = "manifest.txt";

/// Everything needed to repeat a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub data: PathBuf,
    /// Content hash of the dataset directory.
    pub data_hash: String,
    pub out: PathBuf,
    pub config: TrainConfig,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "data={}", self.data.display());
        let _ = writeln!(s, "data_hash={}", self.data_hash);
        let _ = writeln!(s, "out={}", self.out.display());
        let _ = writeln!(s, "config_hash={}", self.config.hash());
        for (k, v) in self.config.to_key_values() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let map = parse_key_values(path, &read_to_string(path)?)?;
        let config = TrainConfig::from_key_values(path, &map)?;
        let recorded = require(path, &map, "config_hash")?;
        if recorded != config.hash() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: "config_hash does not match the recorded configuration".into(),
            });
        }
        Ok(RunManifest {
            data: PathBuf::from(require(path, &map, "data")?),
            data_hash: require(path, &map, "data_hash")?.to_string(),
            out: PathBuf::from(require(path, &map, "out")?),
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tamper_check() {
        let m = RunManifest {
            data: "data/synth".into(),
            data_hash: "ff00".into(),
            out: "runs/a".into(),
            config: TrainConfig {
                seed: 42,
                ..TrainConfig::default()
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(RUN_MANIFEST);
        m.save(&p).unwrap();
        assert_eq!(RunManifest::load(&p).unwrap(), m);
        let tampered = m.to_text().replace("seed=42", "seed=43");
        std::fs::write(&p, tampered).unwrap();
        assert!(RunManifest::load(&p).is_err());
    }
}
