use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{AssaySpec, CompoundRecord, Fingerprint};
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["id", "date", "value", "fp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ParsedDataset {
    pub records: Vec<CompoundRecord>,
    pub skipped: Vec<RowError>,
}

impl ParsedDataset {
    pub fn skip_count(&self) -> usize {
        self.skipped.len()
    }
}

pub fn parse_dataset(
    path: impl AsRef<Path>,
    spec: &AssaySpec,
    fp_len: usize,
    mode: ParseMode,
) -> Result<ParsedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(file, spec, fp_len, mode)
}

pub fn parse_reader<R: Read>(
    reader: R,
    spec: &AssaySpec,
    fp_len: usize,
    mode: ParseMode,
) -> Result<ParsedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let mut columns = [0usize; 4];
    for (slot, name) in columns.iter_mut().zip(HEADER) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::Row {
            line: 1,
            message: format!("missing column {name:?} in header"),
        })?;
    }

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row, &columns, spec, fp_len) {
            Ok(rec) => records.push(rec),
            Err(message) => match mode {
                ParseMode::Strict => return Err(Error::Row { line, message }),
                ParseMode::Lenient => skipped.push(RowError { line, message }),
            },
        }
    }
    Ok(ParsedDataset { records, skipped })
}

fn parse_row(
    row: &csv::StringRecord,
    columns: &[usize; 4],
    spec: &AssaySpec,
    fp_len: usize,
) -> Result<CompoundRecord, String> {
    let field = |k: usize| row.get(columns[k]).unwrap_or("");
    let id = field(0).to_string();
    let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
        .map_err(|e| format!("unparseable date {:?}: {e}", field(1)))?;
    let raw_value: f64 = field(2)
        .parse()
        .map_err(|_| format!("non-numeric value {:?}", field(2)))?;
    let fp = Fingerprint::parse(field(3), fp_len).map_err(|e| e.to_string())?;
    if fp.count_ones() == 0 {
        return Err("fingerprint has no bits set".into());
    }
    let label = spec.label(raw_value).map_err(|e| e.to_string())?;
    Ok(CompoundRecord {
        id,
        fp,
        raw_value,
        date,
        label,
    })
}

/// Writes records in the ingestion schema. Fingerprints whose length is a
/// multiple of 4 are hex encoded, others as 0/1 strings.
pub fn write_dataset<W: Write>(records: &[CompoundRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(HEADER)?;
    for r in records {
        let fp = if r.fp.len() % 4 == 0 {
            r.fp.to_hex()
        } else {
            r.fp.to_bitstring()
        };
        wtr.write_record([
            r.id.as_str(),
            &r.date.format("%Y-%m-%d").to_string(),
            &r.raw_value.to_string(),
            &fp,
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
