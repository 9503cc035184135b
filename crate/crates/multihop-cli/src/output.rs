//! Output sink: stdout by default, `--out FILE` otherwise.
//!
//! Relative `--out` paths resolve under `$MULTIHOP_OUT_DIR` when that
//! variable is set, so batch drivers can redirect a whole experiment with
//! one environment line.  Parent directories are created on demand.

use std::env;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Applies the `$MULTIHOP_OUT_DIR` prefix to relative paths.
fn resolve(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Some(dir) = env::var_os("MULTIHOP_OUT_DIR") {
            return PathBuf::from(dir).join(path);
        }
    }
    path.to_path_buf()
}

/// Writes `payload` to the resolved path, or to stdout when `out` is None.
pub fn emit(out: Option<&Path>, payload: &str) -> Result<()> {
    match out {
        Some(path) => {
            let path = resolve(path);
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)
                        .with_context(|| format!("creating {}", parent.display()))?;
                }
            }
            fs::write(&path, payload).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            // print! would panic on a closed pipe; write and surface the error
            std::io::stdout()
                .write_all(payload.as_bytes())
                .context("writing stdout")
        }
    }
}

/// Derives the per-curve file name `base_el5.csv` from `base.csv` and the
/// rendered mean route length.
pub fn with_suffix(base: &Path, tag: &str) -> PathBuf {
    let stem = base.file_stem().unwrap_or_default().to_string_lossy();
    let name = match base.extension() {
        Some(ext) => format!("{stem}_{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{tag}"),
    };
    base.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_lands_before_the_extension() {
        assert_eq!(
            with_suffix(Path::new("runs/base.csv"), "el5"),
            Path::new("runs/base_el5.csv")
        );
        assert_eq!(with_suffix(Path::new("base"), "el100"), Path::new("base_el100"));
    }
}
