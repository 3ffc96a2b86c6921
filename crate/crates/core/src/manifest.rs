//! Whitespace-separated text manifests.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One non-comment manifest line split into fields.
#[derive(Debug, Clone)]
pub struct ManifestLine {
    pub line: usize,
    pub fields: Vec<String>,
}

/// Read a manifest, requiring exactly `n_fields` fields per line.
/// Blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path, n_fields: usize) -> Result<Vec<ManifestLine>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if fields.len() != n_fields {
            return Err(Error::MalformedManifest {
                path: path.into(),
                line: i + 1,
                reason: format!("expected {n_fields} fields, found {}", fields.len()),
            });
        }
        out.push(ManifestLine { line: i + 1, fields });
    }
    Ok(out)
}

/// Resolve `entry` against the directory holding `manifest` unless absolute.
pub fn resolve(manifest: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}
