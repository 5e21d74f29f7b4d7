//! Atomic artifact files and the run manifest.

use crate::error::{CliError, CliResult};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

pub struct ArtifactWriter {
    out: PathBuf,
    entries: Vec<ArtifactEntry>,
}

/// Write `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io = |source| CliError::Io { path: path.display().to_string(), source };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

impl ArtifactWriter {
    pub fn new(out: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.display().to_string(), source })?;
        Ok(ArtifactWriter { out: out.to_path_buf(), entries: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.out
    }

    /// Write one artifact; a name may be written only once per run.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        if self.entries.iter().any(|e| e.path == name) {
            return Err(CliError::Runtime(format!("artifact {name} written twice")));
        }
        write_atomic(&self.out.join(name), bytes)?;
        self.entries.push(ArtifactEntry {
            path: name.to_string(),
            bytes: bytes.len(),
            sha256: format!("{:x}", Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }
}

/// CSV text from a header and rows of numbers; floats use the shortest
/// representation that reads back exactly.
pub fn csv(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
