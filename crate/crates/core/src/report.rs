//! Versioned CSV reports and all-or-nothing file output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Table with a schema tag written as the first line.
#[derive(Clone, Debug, PartialEq)]
pub struct Csv {
    pub schema: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(schema: &str, columns: &[&str]) -> Self {
        Self { schema: schema.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = format!("# schema {}\n{}\n", self.schema, self.columns.join(","));
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses text written by [`Csv::render`].
    pub fn parse(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        let schema = lines.next()?.strip_prefix("# schema ")?.to_string();
        let columns: Vec<String> = lines.next()?.split(',').map(str::to_string).collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        if rows.iter().any(|r| r.len() != columns.len()) {
            return None;
        }
        Some(Self { schema, columns, rows })
    }

    /// Values of one named column.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Formats a float so that it round-trips exactly.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn staging_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes to a sibling temporary file and renames it into place, so that
/// a failure never leaves a truncated `path` behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = staging_path(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}
