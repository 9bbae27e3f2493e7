use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CorpusError, McsbItem, Reject};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for value in values {
        serde_json::to_writer(&mut out, value).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut values = Vec::new();
    let mut offset = 0usize;
    for line in BufReader::new(file).split(b'\n') {
        let line = line.map_err(io_err(path))?;
        let len = line.len() + 1;
        if !line.iter().all(u8::is_ascii_whitespace) {
            let value = serde_json::from_slice(&line).map_err(|e| CorpusError::Format {
                path: path.display().to_string(),
                offset: offset + e.column().saturating_sub(1),
                message: e.to_string(),
            })?;
            values.push(value);
        }
        offset += len;
    }
    Ok(values)
}

/// Writes one JSON object per line:
/// `{id, source, category, context, choices: [{text, gold}]}`.
pub fn write_items(path: &Path, items: &[McsbItem]) -> Result<(), CorpusError> {
    write_jsonl(path, items)
}

/// Reads a normalized item file, re-checking every item's invariants.
pub fn read_items(path: &Path) -> Result<Vec<McsbItem>, CorpusError> {
    let items: Vec<McsbItem> = read_jsonl(path)?;
    for item in &items {
        item.validate()?;
    }
    Ok(items)
}

pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<(), CorpusError> {
    write_jsonl(path, rejects)
}

pub fn read_rejects(path: &Path) -> Result<Vec<Reject>, CorpusError> {
    read_jsonl(path)
}
