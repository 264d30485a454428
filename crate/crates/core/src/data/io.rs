use std::fs;
use std::path::Path;

use super::{Cell, ColumnKind, ColumnRole, DataError, Dataset, Schema};

/// Literal token read as a missing cell, in addition to the empty string.
pub const MISSING_SENTINEL: &str = "NA";

pub fn load_schema(path: &Path) -> Result<Schema, DataError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| DataError::Schema(format!("{}: {e}", path.display())))
}

pub fn write_schema(path: &Path, schema: &Schema) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(schema).expect("schema serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)?;
    let mut dataset = parse_csv(&text, schema)?;
    dataset.provenance = path.display().to_string();
    Ok(dataset)
}

pub(crate) fn parse_csv(text: &str, schema: &Schema) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| DataError::Io(e.to_string()))?
        .clone();
    let cols = schema.columns();
    for (i, spec) in cols.iter().enumerate() {
        let found = header.get(i).unwrap_or("");
        if found != spec.name {
            return Err(DataError::HeaderMismatch {
                index: i,
                expected: spec.name.clone(),
                found: found.to_string(),
            });
        }
    }
    if header.len() > cols.len() {
        return Err(DataError::HeaderMismatch {
            index: cols.len(),
            expected: String::new(),
            found: header[cols.len()].to_string(),
        });
    }

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Io(e.to_string()))?;
        if record.len() != cols.len() {
            return Err(DataError::Arity {
                row: r,
                expected: cols.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(cols.len());
        for (raw, spec) in record.iter().zip(cols) {
            if raw.is_empty() || raw == MISSING_SENTINEL {
                row.push(Cell::Missing);
                continue;
            }
            let cell = match (spec.role, spec.kind) {
                (ColumnRole::Identifier, _) => Cell::Text(raw.to_string()),
                (_, ColumnKind::Continuous) => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => Cell::Real(v),
                    _ => {
                        return Err(DataError::Numeric {
                            row: r,
                            column: spec.name.clone(),
                            value: raw.to_string(),
                        })
                    }
                },
                (_, ColumnKind::Discrete) => match level_index(&spec.levels, raw) {
                    Some(i) => Cell::Category(i),
                    None => {
                        return Err(DataError::UnknownLevel {
                            row: r,
                            column: spec.name.clone(),
                            value: raw.to_string(),
                        })
                    }
                },
            };
            row.push(cell);
        }
        rows.push(row);
    }
    Dataset::new(schema.clone(), rows, "inline")
}

/// Exact label match first; numeric labels also match numerically
/// (`2` and `2.0` name the same level).
fn level_index(levels: &[String], raw: &str) -> Option<usize> {
    if let Some(i) = levels.iter().position(|l| l == raw) {
        return Some(i);
    }
    let v: f64 = raw.parse().ok()?;
    levels.iter().position(|l| l.parse::<f64>() == Ok(v))
}

pub fn write_csv(path: &Path, dataset: &Dataset) -> Result<(), DataError> {
    fs::write(path, to_csv_string(dataset))?;
    Ok(())
}

pub(crate) fn to_csv_string(dataset: &Dataset) -> String {
    let cols = dataset.schema.columns();
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    writer
        .write_record(cols.iter().map(|c| c.name.as_str()))
        .expect("in-memory write");
    for row in &dataset.rows {
        let fields: Vec<String> = row
            .iter()
            .zip(cols)
            .map(|(cell, spec)| match cell {
                Cell::Real(v) => format!("{v}"),
                Cell::Category(i) => spec.levels[*i].clone(),
                Cell::Text(s) => s.clone(),
                Cell::Missing => String::new(),
            })
            .collect();
        writer.write_record(&fields).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf8")
}
