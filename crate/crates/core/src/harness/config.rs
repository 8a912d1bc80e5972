//! JSON configuration files.
//!
//! Each file is a single JSON object whose keys mirror the fields of the
//! corresponding spec type; missing keys take their defaults.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::controller::ScheduleStep;
use crate::error::{Error, Result};

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
    serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.to_owned(), source })
}

/// A participation schedule: a JSON array whose entries are either
/// `{"window": w, "n": n}` objects or `[w, n]` pairs.
pub fn load_schedule(path: &Path) -> Result<Vec<ScheduleStep>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Step(ScheduleStep),
        Pair(usize, u64),
    }
    let entries: Vec<Entry> = load_json(path)?;
    Ok(entries
        .into_iter()
        .map(|e| match e {
            Entry::Step(s) => s,
            Entry::Pair(window, n) => ScheduleStep { window, n },
        })
        .collect())
}
