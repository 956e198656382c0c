pub mod eval;
pub mod extract;
pub mod gen;
pub mod grad;
pub mod label_report;
pub mod search;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("creating output directory {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_string_pretty(value).context("serializing report")?;
    out.push('\n');
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
