//! Plain-text tables with a `# key: value` header block.
//!
//! Every file this crate writes has the same shape:
//!
//! ```text
//! # kind: echo_series
//! # units: energies in units of t, times in units of 1/t (hbar = 1)
//! # columns: tau r phi
//! 0e0 1e0 0e0
//! ```

use std::fmt::Display;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNITS_NOTE: &str = "energies in units of t, times in units of 1/t (hbar = 1)";

/// First 16 hex digits of SHA-256.
pub fn short_hash(data: impl AsRef<[u8]>) -> String {
    let digest = Sha256::digest(data.as_ref());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Shortest round-trip representation, exponent form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        if let Some(e) = self.entries.iter_mut().find(|(k, _)| k == key) {
            e.1 = value;
        } else {
            self.entries.push((key.to_string(), value));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let v = self.get(key).ok_or_else(|| Error::Parse { line: 0, msg: format!("missing header key `{key}`") })?;
        v.parse().map_err(|_| Error::Parse { line: 0, msg: format!("header `{key}` is not a number: {v}") })
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Header,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing column `{name}`") })
    }

    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("`{}` in column `{name}` is not a number", r[c]),
                })
            })
            .collect()
    }

    pub fn column_str(&self, name: &str) -> Result<Vec<&str>> {
        let c = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[c].as_str()).collect())
    }
}

pub fn write_table<S: AsRef<str>>(header: &Header, columns: &[&str], rows: &[Vec<S>]) -> String {
    let mut out = String::new();
    for (k, v) in header.entries() {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    out.push_str(&format!("# columns: {}\n", columns.join(" ")));
    for row in rows {
        let cells: Vec<&str> = row.iter().map(|c| c.as_ref()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_table(text: &str) -> Result<Table> {
    let mut header = Header::new();
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest
                .split_once(':')
                .ok_or_else(|| Error::Parse { line: n + 1, msg: "header line without `:`".into() })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "columns" {
                columns = Some(v.split_whitespace().map(String::from).collect());
            } else {
                header.push(k, v);
            }
            continue;
        }
        let cols =
            columns.as_ref().ok_or_else(|| Error::Parse { line: n + 1, msg: "data before `# columns:`".into() })?;
        let cells: Vec<String> = line.split_whitespace().map(String::from).collect();
        if cells.len() != cols.len() {
            return Err(Error::Parse {
                line: n + 1,
                msg: format!("expected {} fields, found {}", cols.len(), cells.len()),
            });
        }
        rows.push(cells);
    }
    let columns = columns.ok_or_else(|| Error::Parse { line: 0, msg: "no `# columns:` line".into() })?;
    Ok(Table { header, columns, rows })
}

pub fn read_table(path: &Path) -> Result<Table> {
    parse_table(&std::fs::read_to_string(path)?)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable() {
        assert_eq!(short_hash("abc"), "ba7816bf8f01cfea");
        assert_eq!(short_hash("abc").len(), 16);
    }

    #[test]
    fn table_round_trip() {
        let mut h = Header::new();
        h.push("kind", "demo");
        h.push("theta", 0.1);
        let rows = vec![vec![fmt_f64(0.0), fmt_f64(1.0)], vec![fmt_f64(0.1), fmt_f64(-2.5e-17)]];
        let text = write_table(&h, &["tau", "r"], &rows);
        let t = parse_table(&text).unwrap();
        assert_eq!(t.header.get("kind"), Some("demo"));
        assert_eq!(t.header.get_f64("theta").unwrap(), 0.1);
        assert_eq!(t.column_f64("r").unwrap(), vec![1.0, -2.5e-17]);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_table("# columns: a b\n1 2 3\n").is_err());
        assert!(parse_table("1 2\n").is_err());
        let t = parse_table("# columns: a\nx\n").unwrap();
        assert!(t.column_f64("a").is_err());
    }
}
