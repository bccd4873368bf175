//! Artifact writing: CSV tables and JSON summaries under the experiment's
//! output directory. CSV uses '.' decimals and fixed headers.

use crate::error::Result;
use std::path::{Path, PathBuf};

pub fn write_text(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

/// Simple CSV table builder with a fixed header.
pub struct CsvTable {
    header: String,
    rows: Vec<String>,
}

impl CsvTable {
    pub fn new(header: &str) -> Self {
        Self { header: header.to_string(), rows: Vec::new() }
    }

    pub fn push_row(&mut self, cells: &[String]) {
        self.rows.push(cells.join(","));
    }

    pub fn render(&self) -> String {
        let mut out = self.header.clone();
        out.push('\n');
        for row in &self.rows {
            out.push_str(row);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        write_text(dir, name, &self.render())
    }
}

pub fn fmt(x: f64) -> String {
    format!("{x}")
}
