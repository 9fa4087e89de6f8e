//! Minimal CSV plumbing shared by the file formats in this crate.
//!
//! Every format here is comma-separated, UTF-8, header row required, decimal
//! point '.', no quoting (identifiers may not contain commas). Writers go
//! through [`write_atomic`] so partially written files are never observed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: empty file, expected a header row")]
    Empty { path: PathBuf },
    #[error("{path}: expected header '{expected}', found '{found}'")]
    Header { path: PathBuf, expected: String, found: String },
    #[error("{path}:{line}: expected {expected} fields, found {found}")]
    FieldCount { path: PathBuf, line: usize, expected: usize, found: usize },
    #[error("{path}:{line}: invalid {field}: '{value}'")]
    Value { path: PathBuf, line: usize, field: &'static str, value: String },
}

/// A parsed CSV table with its header validated against `expected`.
#[derive(Debug)]
pub struct CsvTable {
    pub path: PathBuf,
    pub rows: Vec<(usize, Vec<String>)>,
}

pub fn read_csv(path: &Path, expected_header: &str) -> Result<CsvTable, CsvError> {
    let raw = fs::read_to_string(path)
        .map_err(|source| CsvError::Read { path: path.to_path_buf(), source })?;
    let mut lines = raw.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CsvError::Empty { path: path.to_path_buf() })?;
    if header.trim() != expected_header {
        return Err(CsvError::Header {
            path: path.to_path_buf(),
            expected: expected_header.to_string(),
            found: header.trim().to_string(),
        });
    }
    let n_fields = expected_header.split(',').count();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != n_fields {
            return Err(CsvError::FieldCount {
                path: path.to_path_buf(),
                line: idx + 1,
                expected: n_fields,
                found: fields.len(),
            });
        }
        rows.push((idx + 1, fields));
    }
    Ok(CsvTable { path: path.to_path_buf(), rows })
}

impl CsvTable {
    pub fn parse_f64(&self, line: usize, field: &'static str, value: &str) -> Result<f64, CsvError> {
        let v: f64 = value
            .parse()
            .map_err(|_| self.value_error(line, field, value))?;
        if !v.is_finite() {
            return Err(self.value_error(line, field, value));
        }
        Ok(v)
    }

    pub fn parse_usize(&self, line: usize, field: &'static str, value: &str) -> Result<usize, CsvError> {
        value.parse().map_err(|_| self.value_error(line, field, value))
    }

    pub fn value_error(&self, line: usize, field: &'static str, value: &str) -> CsvError {
        CsvError::Value { path: self.path.clone(), line, field, value: value.to_string() }
    }
}

/// Write a file via a temp sibling and rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CsvError> {
    let wrap = |source: std::io::Error| CsvError::Write { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(wrap)?;
        }
    }
    let mut tmp = path.to_path_buf();
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    {
        let mut f = fs::File::create(&tmp).map_err(wrap)?;
        f.write_all(contents.as_bytes()).map_err(wrap)?;
        f.sync_all().map_err(wrap)?;
    }
    fs::rename(&tmp, path).map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_mismatch_is_reported() {
        let dir = std::env::temp_dir().join("bustime-csvio-test");
        let path = dir.join("t.csv");
        write_atomic(&path, "a,b\n1,2\n").unwrap();
        assert!(read_csv(&path, "a,b").is_ok());
        let err = read_csv(&path, "a,c").unwrap_err();
        assert!(matches!(err, CsvError::Header { .. }));
    }

    #[test]
    fn field_count_and_values() {
        let dir = std::env::temp_dir().join("bustime-csvio-test");
        let path = dir.join("v.csv");
        write_atomic(&path, "a,b\n1,2\n3\n").unwrap();
        assert!(matches!(read_csv(&path, "a,b"), Err(CsvError::FieldCount { line: 3, .. })));
        write_atomic(&path, "a,b\n1,x\n").unwrap();
        let t = read_csv(&path, "a,b").unwrap();
        let (line, row) = &t.rows[0];
        assert!(t.parse_f64(*line, "b", &row[1]).is_err());
        assert_eq!(t.parse_f64(*line, "a", &row[0]).unwrap(), 1.0);
    }
}
