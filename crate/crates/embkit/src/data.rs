//! Shared record types and JSON Lines IO.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// A document in a corpus or mining pool.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
}

/// One training example: a query, its positive document, and zero or more
/// negative documents, tagged with task and language.
///
/// Wire format (JSON Lines, one object per line):
/// `{"query", "pos", "negs": [..], "task", "lang"}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingPair {
    pub query: String,
    pub pos: String,
    #[serde(default)]
    pub negs: Vec<String>,
    pub task: String,
    pub lang: String,
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad json on line {line} of {path}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Read a whole JSONL file into memory. Blank lines are skipped.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: display.clone(),
            line: idx + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Write records as JSONL, one object per line, UTF-8.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let display = path.display().to_string();
    let io_err = |source| JsonlError::Io {
        path: display.clone(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("serializable record");
        writeln!(writer, "{line}").map_err(|source| JsonlError::Io {
            path: display.clone(),
            source,
        })?;
    }
    writer.flush().map_err(|source| JsonlError::Io {
        path: display.clone(),
        source,
    })?;
    Ok(())
}
