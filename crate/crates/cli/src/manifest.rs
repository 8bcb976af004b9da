//! Dataset manifests: one `image<TAB>annotation` pair per line. Scoring uses
//! the same layout with `detections<TAB>truth`.
//!
//! Relative paths are resolved against the directory holding the manifest.
//! Blank lines and lines starting with `#` are skipped.

use std::path::{Path, PathBuf};

use sinnet_core::fsutil::write_atomic;

use crate::{io_err, CliError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub image: PathBuf,
    pub annotation: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<Entry>,
}

/// Parses tab-separated path pairs, resolving them against the directory of
/// `path`.
pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(CliError::Manifest {
                path: path.to_path_buf(),
                reason: format!("line {}: expected two tab-separated paths", i + 1),
            });
        }
        pairs.push((base.join(fields[0].trim()), base.join(fields[1].trim())));
    }
    Ok(pairs)
}

/// Reads a pair file and checks that it is non-empty and that every file it
/// names exists.
pub fn load_pairs(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let pairs = parse_pairs(&text, path)?;
    if pairs.is_empty() {
        return Err(CliError::Manifest {
            path: path.to_path_buf(),
            reason: "no entries".into(),
        });
    }
    for (a, b) in &pairs {
        for f in [a, b] {
            if !f.is_file() {
                return Err(CliError::Manifest {
                    path: path.to_path_buf(),
                    reason: format!("missing file {}", f.display()),
                });
            }
        }
    }
    Ok(pairs)
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        Ok(Self::from_pairs(parse_pairs(text, path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_pairs(load_pairs(path)?))
    }

    fn from_pairs(pairs: Vec<(PathBuf, PathBuf)>) -> Self {
        let entries = pairs
            .into_iter()
            .map(|(image, annotation)| Entry { image, annotation })
            .collect();
        Self { entries }
    }
}

/// Writes a manifest whose paths are given relative to its own directory.
pub fn write_manifest(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (a, b) in rows {
        text.push_str(a);
        text.push('\t');
        text.push_str(b);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}
