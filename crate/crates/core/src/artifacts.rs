//! On-disk layout of a run directory and atomic file output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let rows: std::result::Result<Vec<T>, csv::Error> = r.deserialize().collect();
    rows.map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("json: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Paths inside one run directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn dataset_manifest(&self) -> PathBuf {
        self.root.join("dataset").join("manifest.json")
    }

    /// Relative to the dataset directory.
    pub fn recording_name(index: usize) -> String {
        format!("recordings/rec_{index:04}.csv")
    }

    pub fn dataset_file(&self, name: &str) -> PathBuf {
        self.root.join("dataset").join(name)
    }

    pub fn model_dir(&self, variant: &str, seed: u64) -> PathBuf {
        self.root.join("models").join(variant).join(format!("seed_{seed}"))
    }

    pub fn checkpoint(&self, variant: &str, seed: u64) -> PathBuf {
        self.model_dir(variant, seed).join("model.ckpt")
    }

    pub fn evaluation(&self, name: &str) -> PathBuf {
        self.root.join("evaluation").join(name)
    }

    pub fn ablation(&self, name: &str) -> PathBuf {
        self.root.join("ablation").join(name)
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("report").join(name)
    }

    /// Path relative to the run root, for manifests.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).display().to_string()
    }
}

/// Files written by each command, keyed by command name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub outputs: BTreeMap<String, Vec<String>>,
}

impl RunManifest {
    /// Replaces the entry of `command` in the manifest at `dir`.
    pub fn record(dir: &RunDir, seed: u64, command: &str, files: Vec<String>) -> Result<()> {
        let path = dir.manifest();
        let mut m: RunManifest = if path.exists() {
            read_json(&path)?
        } else {
            RunManifest::default()
        };
        m.seed = seed;
        m.outputs.insert(command.to_string(), files);
        write_json(&path, &m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        name: String,
        value: f64,
    }

    #[test]
    fn csv_round_trip_and_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/rows.csv");
        let rows = vec![
            Row {
                name: "x".into(),
                value: 0.1,
            },
            Row {
                name: "y".into(),
                value: f64::NAN,
            },
        ];
        write_csv(&path, &rows).unwrap();
        write_csv(&path, &rows[..1]).unwrap();
        let back: Vec<Row> = read_csv(&path).unwrap();
        assert_eq!(back, rows[..1]);
        let leftovers = fs::read_dir(path.parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn manifest_accumulates_commands() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        RunManifest::record(&run, 3, "generate", vec!["a".into()]).unwrap();
        RunManifest::record(&run, 3, "train", vec!["b".into()]).unwrap();
        let m: RunManifest = read_json(&run.manifest()).unwrap();
        assert_eq!(m.outputs.len(), 2);
        assert_eq!(m.outputs["train"], vec!["b".to_string()]);
    }
}
