//! Report envelopes and deterministic JSON/CSV writing.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Wraps a report with its fully resolved configuration so every output is
/// reproducible from the file alone. Keys are emitted sorted (the JSON map
/// is tree-backed), so identical runs produce identical bytes.
pub fn envelope<C: Serialize, R: Serialize>(config: &C, report: &R) -> Result<Value> {
    let mut root = serde_json::Map::new();
    root.insert("config".into(), serde_json::to_value(config)?);
    root.insert("report".into(), serde_json::to_value(report)?);
    root.insert(
        "tool".into(),
        serde_json::json!({
            "name": "nlop",
            "version": env!("CARGO_PKG_VERSION"),
        }),
    );
    Ok(Value::Object(root))
}

pub fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// CSV with a header row, '.' decimal separator, '\n' line endings.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            buf: header.join(",") + "\n",
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn num(v: f64) -> String {
        format!("{v:.12e}")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.buf).with_context(|| format!("writing {}", path.display()))
    }
}
