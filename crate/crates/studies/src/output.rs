//! CSV emission with a `# key=value` metadata preamble.
//!
//! Files produced here are deterministic: metadata carries the config hash,
//! seed and tool version, never wall-clock times.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use v2g_core::{Error, Result};

/// Metadata lines shared by every file of one study run.
#[derive(Debug, Clone)]
pub struct Meta {
    pub entries: Vec<(String, String)>,
}

impl Meta {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Self {
            entries: vec![
                ("tool_version".into(), crate::TOOL_VERSION.into()),
                ("config_hash".into(), config_hash.into()),
                ("seed".into(), seed.to_string()),
            ],
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }
}

/// Write a metadata preamble, a header line, then the data rows.
pub fn write_csv<S: AsRef<str>>(
    path: &Path,
    meta: &Meta,
    header: &str,
    rows: impl IntoIterator<Item = S>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for (key, value) in &meta.entries {
        writeln!(out, "# {key}={value}")?;
    }
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{}", row.as_ref())?;
    }
    out.flush()?;
    Ok(())
}

/// Read back a metadata CSV: `(metadata, header, rows)`.
pub fn read_csv(path: &Path) -> Result<(Vec<(String, String)>, String, Vec<Vec<String>>)> {
    let file = File::open(path)?;
    let mut meta = Vec::new();
    let mut header = None;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(line);
            continue;
        }
        rows.push(line.split(',').map(|s| s.trim().to_string()).collect());
    }
    let header = header.ok_or_else(|| {
        Error::parse(path.display().to_string(), "file has no header line")
    })?;
    Ok((meta, header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_metadata_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("out.csv");
        let meta = Meta::new("abcd", 7).with("study", "temperature");
        write_csv(&path, &meta, "a,b", ["1,2", "3,4"]).unwrap();
        let (meta_read, header, rows) = read_csv(&path).unwrap();
        assert!(meta_read.contains(&("config_hash".into(), "abcd".into())));
        assert!(meta_read.contains(&("seed".into(), "7".into())));
        assert_eq!(header, "a,b");
        assert_eq!(rows, vec![vec!["1", "2"], vec!["3", "4"]]);
    }

    #[test]
    fn identical_inputs_write_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let meta = Meta::new("ffff", 1);
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_csv(&p1, &meta, "x", ["1"]).unwrap();
        write_csv(&p2, &meta, "x", ["1"]).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap()
        );
    }
}
