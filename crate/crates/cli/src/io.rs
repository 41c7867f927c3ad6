use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// A numeric table read from CSV.
#[derive(Debug)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_row(record: &csv::StringRecord) -> std::result::Result<Vec<f64>, (usize, String)> {
    record
        .iter()
        .enumerate()
        .map(|(k, field)| field.trim().parse::<f64>().map_err(|_| (k + 1, field.to_string())))
        .collect()
}

/// Reads comma-separated numbers. A first line with any non-numeric field
/// is taken as the header.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut header = None;
    let mut rows = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let values = match parse_row(&record) {
            Ok(v) => v,
            Err(_) if k == 0 => {
                header = Some(record.iter().map(|f| f.trim().to_string()).collect());
                width = Some(record.len());
                continue;
            }
            Err((col, field)) => {
                bail!("{}: line {line}, column {col}: '{field}' is not a number", path.display())
            }
        };
        if let Some(w) = width {
            if values.len() != w {
                bail!("{}: line {line}: expected {w} fields, found {}", path.display(), values.len());
            }
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            bail!("{}: line {line}, column {}: value is not finite", path.display(), bad + 1);
        }
        width = Some(values.len());
        rows.push(values);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(Table { header, rows })
}

pub fn read_json<T: DeserializeOwned>(path: &Path, seed: Option<u64>) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_json(&text, seed).with_context(|| format!("invalid config {}", path.display()))
}

/// Parses JSON, replacing a top-level `seed` field when `seed` is given.
pub fn parse_json<T: DeserializeOwned>(text: &str, seed: Option<u64>) -> Result<T> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    if let (Some(s), Some(obj)) = (seed, value.as_object_mut()) {
        obj.insert("seed".into(), s.into());
    }
    Ok(serde_json::from_value(value)?)
}

fn staging_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes to `path` through a sibling `.tmp` file, or to stdout when `path`
/// is `None`.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
        }
        Some(p) => {
            let tmp = staging_path(p);
            fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
            if let Err(e) = fs::rename(&tmp, p) {
                let _ = fs::remove_file(&tmp);
                return Err(e).with_context(|| format!("cannot move output into {}", p.display()));
            }
        }
    }
    Ok(())
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    Ok(writer.into_inner().map_err(|e| e.into_error())?)
}

/// CSV from an explicit header and rows of preformatted fields.
pub fn csv_table(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    Ok(writer.into_inner().map_err(|e| e.into_error())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_detection_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "x,y\n1,2\n3,4\n").unwrap();
        let t = read_table(&path).unwrap();
        assert_eq!(t.header.as_deref(), Some(&["x".to_string(), "y".to_string()][..]));
        assert_eq!(t.rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);

        fs::write(&path, "1,2\n3,oops\n").unwrap();
        let err = read_table(&path).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("column 2"), "{err}");

        fs::write(&path, "1,2\n3\n").unwrap();
        assert!(read_table(&path).unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn seed_override() {
        #[derive(serde::Deserialize)]
        struct S {
            seed: u64,
        }
        let s: S = parse_json(r#"{"seed": 1}"#, Some(9)).unwrap();
        assert_eq!(s.seed, 9);
        let s: S = parse_json(r#"{"seed": 1}"#, None).unwrap();
        assert_eq!(s.seed, 1);
    }

    #[test]
    fn staged_write_leaves_no_tmp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_output(Some(&path), b"{}").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"{}");
        assert!(!staging_path(&path).exists());
    }
}
