//! Delimited text dataset files.
//!
//! First row holds the field names plus a `label` column; each further row
//! is one instance. Multivalent cells join their tokens with `|`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::schema::{DatasetSchema, RawRow, RawTable};
use crate::error::{FgcnnError, Result};

pub const LABEL_COLUMN: &str = "label";
pub const MULTI_SEPARATOR: char = '|';

pub fn parse_table<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let label_col = header
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| FgcnnError::Format {
            line: 1,
            detail: format!("no `{LABEL_COLUMN}` column"),
        })?;
    let field_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_col)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(rows.len() + 2, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(FgcnnError::Format {
                line,
                detail: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let label = match &rec[label_col] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(FgcnnError::Format {
                    line,
                    detail: format!("label must be 0 or 1, found `{other}`"),
                })
            }
        };
        let values = rec
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_col)
            .map(|(_, cell)| cell.split(MULTI_SEPARATOR).map(str::to_string).collect())
            .collect();
        rows.push(RawRow { values, label });
    }
    Ok(RawTable { field_names, rows })
}

pub fn read_table(path: &Path) -> Result<RawTable> {
    parse_table(BufReader::new(File::open(path)?))
}

pub fn write_table_to<W: Write>(table: &RawTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = table.field_names.iter().map(String::as_str).collect();
    header.push(LABEL_COLUMN);
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec: Vec<String> = row
            .values
            .iter()
            .map(|toks| toks.join(&MULTI_SEPARATOR.to_string()))
            .collect();
        rec.push(row.label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table(table: &RawTable, path: &Path) -> Result<()> {
    write_table_to(table, BufWriter::new(File::create(path)?))
}

/// One probability per line, in shortest round-trip form.
pub fn write_probs(probs: &[f64], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in probs {
        writeln!(w, "{p}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_probs(path: &Path) -> Result<Vec<f64>> {
    let r = BufReader::new(File::open(path)?);
    r.lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|(i, l)| {
            let l = l?;
            l.trim().parse::<f64>().map_err(|e| FgcnnError::Format {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn write_schema(schema: &DatasetSchema, path: &Path) -> Result<()> {
    std::fs::write(path, schema.to_sidecar())?;
    Ok(())
}

pub fn read_schema(path: &Path) -> Result<DatasetSchema> {
    DatasetSchema::from_sidecar(&std::fs::read_to_string(path)?)
}
