//! Files: store dumps, traces and JSON documents.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter};
use std::path::Path;

use ethanos_core::storage::{KvStore, LoadError};
use serde::Serialize;

use crate::workload::{Trace, TraceReadError};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("store dump: {0}")]
    Store(LoadError),
    #[error(transparent)]
    Trace(#[from] TraceReadError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Writes the store as a record stream.
pub fn save_store(path: &Path, store: &KvStore) -> Result<(), PersistError> {
    fs::write(path, store.dump())?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<KvStore, PersistError> {
    KvStore::load(&fs::read(path)?).map_err(PersistError::Store)
}

pub fn save_trace(path: &Path, trace: &Trace) -> Result<(), PersistError> {
    trace.write_jsonl(BufWriter::new(File::create(path)?))?;
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<Trace, PersistError> {
    Ok(Trace::read_jsonl(BufReader::new(File::open(path)?))?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PersistError> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}
