//! Newline-delimited JSON embedding store.
//!
//! ```text
//! {"model":"RN50","dim":4}
//! {"key":"red photo","dim":4,"values":[0.1,0.2,0.3,0.4]}
//! ```
//!
//! The header line is optional; when present it must come first.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(default)]
    model: Option<String>,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    key: String,
    dim: usize,
    values: Vec<f64>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_embedding_store<T: Real>(text: &str) -> Result<EmbeddingStore<T>> {
    let mut store = EmbeddingStore::new(None, None);
    let mut seen_record = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| parse_err(line, format!("invalid JSON: {e}")))?;
        let is_record = value.get("key").is_some();
        if !is_record {
            if seen_record || store.dim().is_some() || store.model.is_some() {
                return Err(parse_err(line, "header must be the first record"));
            }
            let header: Header =
                serde_json::from_value(value).map_err(|e| parse_err(line, format!("invalid header: {e}")))?;
            if header.dim == 0 {
                return Err(parse_err(line, "header dim must be positive"));
            }
            store = EmbeddingStore::new(header.model, Some(header.dim));
            continue;
        }
        seen_record = true;
        let record: Record =
            serde_json::from_value(value).map_err(|e| parse_err(line, format!("invalid record: {e}")))?;
        if record.values.len() != record.dim {
            return Err(parse_err(
                line,
                format!("record {:?} declares dim {} but has {} values", record.key, record.dim, record.values.len()),
            ));
        }
        if let Some(d) = store.dim() {
            if d != record.dim {
                return Err(parse_err(line, format!("record {:?} has dim {}, store dim is {d}", record.key, record.dim)));
            }
        }
        if record.dim == 0 {
            return Err(parse_err(line, format!("record {:?} is empty", record.key)));
        }
        if store.keys().any(|k| k == record.key) {
            return Err(parse_err(line, format!("duplicate key {:?}", record.key)));
        }
        let key = record.key;
        let values = record.values.into_iter().map(T::lit).collect();
        store.insert(key, values).map_err(|e| parse_err(line, e.to_string()))?;
    }
    Ok(store)
}

/// Header (when the store knows its dim) plus one record per entry, in insertion order.
pub fn embedding_store_to_string<T: Real>(store: &EmbeddingStore<T>) -> Result<String> {
    let mut out = String::new();
    if let Some(dim) = store.dim() {
        let header = Header {
            model: store.model.clone(),
            dim,
        };
        out.push_str(&serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    for (key, values) in store.entries() {
        let record = Record {
            key: key.to_string(),
            dim: values.len(),
            values: values.iter().map(|v| v.as_f64()).collect(),
        };
        out.push_str(&serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_embedding_store<T: Real>(path: impl AsRef<Path>) -> Result<EmbeddingStore<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_store(&text)
}

pub fn write_embedding_store<T: Real>(store: &EmbeddingStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, embedding_store_to_string(store)?).map_err(|e| Error::io(path, e))
}
