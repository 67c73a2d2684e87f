//! Append-only results store: one `run-<k>.json` per evaluation run plus a
//! `latest` pointer file, all in a single directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{EvaluationRun, RunStatus};

pub const LATEST_FILE: &str = "latest";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store directory {} does not exist", .0.display())]
    Missing(PathBuf),
    #[error("store I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt run file {}: {msg}", path.display())]
    Corrupt { path: PathBuf, msg: String },
    #[error("run {0} already exists")]
    Exists(u64),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    /// Opens the store at `dir`, creating the directory if needed.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir })
    }

    /// Opens an existing store directory read-only.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(StoreError::Missing(dir));
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn run_path(&self, run_id: u64) -> PathBuf {
        self.dir.join(run_file_name(run_id))
    }

    /// Ids of all persisted runs, ascending.
    pub fn run_ids(&self) -> Result<Vec<u64>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let entry = entry.map_err(io_err(&self.dir))?;
            if let Some(id) = entry.file_name().to_str().and_then(parse_run_file_name) {
                ids.push(id);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn next_run_id(&self) -> Result<u64, StoreError> {
        Ok(self.run_ids()?.last().map_or(1, |id| id + 1))
    }

    pub fn load(&self, run_id: u64) -> Result<EvaluationRun, StoreError> {
        let path = self.run_path(run_id);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path,
            msg: e.to_string(),
        })
    }

    pub fn load_all(&self) -> Result<Vec<EvaluationRun>, StoreError> {
        self.run_ids()?.into_iter().map(|id| self.load(id)).collect()
    }

    /// Most recent run with status `ok`.
    pub fn latest_ok(&self) -> Result<Option<EvaluationRun>, StoreError> {
        for id in self.run_ids()?.into_iter().rev() {
            let run = self.load(id)?;
            if run.status == RunStatus::Ok {
                return Ok(Some(run));
            }
        }
        Ok(None)
    }

    /// Contents of the `latest` pointer, if present.
    pub fn latest_pointer(&self) -> Option<String> {
        fs::read_to_string(self.dir.join(LATEST_FILE))
            .ok()
            .map(|s| s.trim().to_string())
    }

    /// Persists a new run. Existing run files are never overwritten.
    pub fn append(&self, run: &EvaluationRun) -> Result<PathBuf, StoreError> {
        let path = self.run_path(run.run_id);
        if path.exists() {
            return Err(StoreError::Exists(run.run_id));
        }
        let mut json = serde_json::to_string_pretty(run).expect("runs serialize");
        json.push('\n');
        write_atomic(&self.dir, &path, json.as_bytes())?;
        let pointer = format!("{}\n", run_file_name(run.run_id));
        write_atomic(&self.dir, &self.dir.join(LATEST_FILE), pointer.as_bytes())?;
        Ok(path)
    }
}

fn write_atomic(dir: &Path, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn run_file_name(run_id: u64) -> String {
    format!("run-{run_id}.json")
}

fn parse_run_file_name(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("run-")?.strip_suffix(".json")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}
