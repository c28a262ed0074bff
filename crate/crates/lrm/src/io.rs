//! CSV tables with a one-line comment header carrying the config hash and
//! column units, plus the matching reader.
//!
//! ```text
//! # config_hash=<sha256 hex> units=t:years,s:currency
//! path,t,s
//! 0,0,1
//! ```
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! table read back reproduces the written values exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: malformed header comment: {line:?}")]
    Header { path: PathBuf, line: String },
    #[error("{path}: row {row}, column {column}: cannot parse {value:?} as a number")]
    Number { path: PathBuf, row: usize, column: usize, value: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

/// A numeric table as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub config_hash: String,
    pub units: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(config_hash: &str, units: &str, columns: &[&str]) -> Self {
        Table {
            config_hash: config_hash.to_string(),
            units: units.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Entry of the output inventory.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub rows: usize,
    pub sha256: String,
}

fn header_line(config_hash: &str, units: &str) -> String {
    format!("# config_hash={config_hash} units={units}\n")
}

pub fn write_table(path: &Path, table: &Table) -> Result<FileEntry, IoError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(header_line(&table.config_hash, &table.units).as_bytes());
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&table.columns).map_err(|source| IoError::Csv { path: path.to_path_buf(), source })?;
        let mut fields = Vec::with_capacity(table.columns.len());
        for row in &table.rows {
            fields.clear();
            fields.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&fields).map_err(|source| IoError::Csv { path: path.to_path_buf(), source })?;
        }
        w.flush().map_err(io_err(path))?;
    }
    write_bytes(path, &buf)?;
    Ok(FileEntry { file: file_name(path), rows: table.rows.len(), sha256: hex::encode(Sha256::digest(&buf)) })
}

/// Writes a text file whose first line is the hash comment.
pub fn write_text(path: &Path, config_hash: &str, units: &str, body: &str) -> Result<FileEntry, IoError> {
    let mut buf = header_line(config_hash, units).into_bytes();
    buf.extend_from_slice(body.as_bytes());
    write_bytes(path, &buf)?;
    Ok(FileEntry { file: file_name(path), rows: body.lines().count(), sha256: hex::encode(Sha256::digest(&buf)) })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let mut f = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f.write_all(bytes).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Parses `# config_hash=<hex> units=<units>`.
pub fn parse_header(line: &str) -> Option<(String, String)> {
    let rest = line.strip_prefix("# config_hash=")?;
    let (hash, units) = rest.split_once(' ')?;
    let units = units.strip_prefix("units=")?;
    Some((hash.to_string(), units.trim_end().to_string()))
}

/// Reads the hash comment of any output file.
pub fn read_header(path: &Path) -> Result<(String, String), IoError> {
    let mut first = String::new();
    BufReader::new(File::open(path).map_err(io_err(path))?).read_line(&mut first).map_err(io_err(path))?;
    parse_header(&first).ok_or_else(|| IoError::Header { path: path.to_path_buf(), line: first.trim_end().to_string() })
}

pub fn read_table(path: &Path) -> Result<Table, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let (config_hash, units) =
        parse_header(first).ok_or_else(|| IoError::Header { path: path.to_path_buf(), line: first.to_string() })?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let columns = r
        .headers()
        .map_err(|source| IoError::Csv { path: path.to_path_buf(), source })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|source| IoError::Csv { path: path.to_path_buf(), source })?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.parse::<f64>().map_err(|_| IoError::Number { path: path.to_path_buf(), row: i + 1, column: j + 1, value: v.to_string() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table { config_hash, units, columns, rows })
}

/// Text table with the same header convention, for files with
/// non-numeric columns such as summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Records {
    pub config_hash: String,
    pub units: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_records(path: &Path) -> Result<Records, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let (config_hash, units) =
        parse_header(first).ok_or_else(|| IoError::Header { path: path.to_path_buf(), line: first.to_string() })?;
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let columns = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(csv_err))
        .collect::<Result<_, _>>()?;
    Ok(Records { config_hash, units, columns, rows })
}
