//! JSON Lines record store: one [`ExperimentRecord`] per line.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{ExperimentRecord, TrainerError, RECORD_SCHEMA_VERSION};

#[derive(Debug, Clone)]
pub struct RecordStore {
    path: PathBuf,
}

impl RecordStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Directory that relative checkpoint paths resolve against.
    pub fn root(&self) -> PathBuf {
        self.path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn exists(&self) -> bool {
        self.path.exists()
    }

    /// Reads every record; a missing file is an empty store.
    pub fn load(&self) -> Result<Vec<ExperimentRecord>, TrainerError> {
        let file = match fs::File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExperimentRecord =
                serde_json::from_str(&line).map_err(|e| TrainerError::Store {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if rec.schema_version != RECORD_SCHEMA_VERSION {
                return Err(TrainerError::Store {
                    line: i + 1,
                    message: format!("unsupported schema version {}", rec.schema_version),
                });
            }
            out.push(rec);
        }
        Ok(out)
    }

    pub fn append(&self, records: &[ExperimentRecord]) -> Result<(), TrainerError> {
        if records.is_empty() {
            return Ok(());
        }
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).expect("records serialize"));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Atomically replaces the store contents.
    pub fn replace_all(&self, records: &[ExperimentRecord]) -> Result<(), TrainerError> {
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = self.path.with_extension("jsonl.tmp");
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).expect("records serialize"));
            buf.push('\n');
        }
        fs::write(&tmp, buf)?;
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}
