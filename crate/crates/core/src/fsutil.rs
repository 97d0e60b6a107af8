use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{QeError, Result};

/// Writes a sibling temporary file and renames it over `path`, so readers
/// never observe a partial file even with several writer processes.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(name);
    fs::write(&tmp, bytes).map_err(|e| QeError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        QeError::io(path, e)
    })
}
