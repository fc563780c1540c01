use super::config::{DerivedSeeds, RunConfig};
use crate::error::{Error, Result};
use crate::params::{ParamLayout, ParamStore};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Run record written next to every set of artifacts.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: RunConfig,
    pub seeds: DerivedSeeds,
    pub artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_layout: Option<Vec<ParamLayout>>,
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: config.clone(),
            seeds: config.seeds(),
            artifacts: Vec::new(),
            param_layout: None,
            summary: serde_json::Value::Null,
        }
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// readers never observe a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Argument(format!("csv encoding: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Argument(format!("csv encoding: {e}")))?;
    write_atomic(path, &bytes)
}

pub fn write_params(path: &Path, params: &ParamStore) -> Result<()> {
    let mut bytes = Vec::new();
    params.write_bin(&mut bytes)?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::EpochRecord;

    #[test]
    fn csv_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss_history.csv");
        let rows = [
            EpochRecord {
                epoch: 0,
                train_mse: 0.5,
                test_mse: 0.25,
            },
            EpochRecord {
                epoch: 1,
                train_mse: 0.125,
                test_mse: 1e-9,
            },
        ];
        write_csv(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_mse,test_mse");
        assert_eq!(lines[1], "0,0.5,0.25");
        assert_eq!(lines.len(), 3);
        assert!(!dir.path().join(".loss_history.csv.partial").exists());
    }

    #[test]
    fn manifest_echoes_config_and_seeds() {
        let cfg = RunConfig {
            seed: 9,
            ..RunConfig::default()
        };
        let m = Manifest::new("train", &cfg);
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["config"]["seed"], 9);
        assert_eq!(v["seeds"]["master"], 9);
        assert_eq!(v["tool"], "pbnet");
        let back: RunConfig = serde_json::from_value(v["config"].clone()).unwrap();
        assert_eq!(back, cfg);
    }
}
