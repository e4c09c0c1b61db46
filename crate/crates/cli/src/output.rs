use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Write through a temporary file in the same directory, then rename over the target.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp: PathBuf = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `0.05` → `0.05`, safe for file names.
pub fn hbar_tag(h: f64) -> String {
    format!("{h}").replace('-', "m")
}

#[derive(Serialize)]
pub struct ErrorRecord {
    pub status: &'static str,
    pub kind: String,
    pub message: String,
    pub chain: Vec<String>,
}

impl ErrorRecord {
    pub fn from_error(e: &anyhow::Error) -> ErrorRecord {
        let kind = e
            .chain()
            .find_map(|c| c.downcast_ref::<qtorus::error::Error>().map(|q| q.kind().to_string()))
            .or_else(|| e.chain().find_map(|c| c.downcast_ref::<std::io::Error>().map(|_| "io".to_string())))
            .unwrap_or_else(|| "config".to_string());
        ErrorRecord { status: "error", kind, message: e.to_string(), chain: e.chain().skip(1).map(|c| c.to_string()).collect() }
    }
}
