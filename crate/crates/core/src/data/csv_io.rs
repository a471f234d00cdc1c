//! CSV ingestion with an optional schema sidecar.
//!
//! CSV: UTF-8, header row, comma separator, empty field = missing.
//! Sidecar: one `column_name,kind` line per column with kind in
//! {numeric, categorical, label}.

use std::collections::HashMap;
use std::path::Path;

use super::{Column, ColumnValues, DataError, DataTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaKind {
    Numeric,
    Categorical,
    Label,
}

pub type SchemaMap = HashMap<String, SchemaKind>;

/// Parse a schema sidecar file.
pub fn load_schema(path: &Path) -> Result<SchemaMap, DataError> {
    if !path.exists() {
        return Err(DataError::FileNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut map = SchemaMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((name, kind)) = line.split_once(',') else {
            return Err(DataError::SchemaMismatch(format!(
                "schema line {} is not `column,kind`: {line:?}",
                lineno + 1
            )));
        };
        let kind = match kind.trim() {
            "numeric" => SchemaKind::Numeric,
            "categorical" => SchemaKind::Categorical,
            "label" => SchemaKind::Label,
            other => {
                return Err(DataError::SchemaMismatch(format!(
                    "unknown schema kind {other:?} on line {}",
                    lineno + 1
                )))
            }
        };
        map.insert(name.trim().to_string(), kind);
    }
    Ok(map)
}

/// Load a CSV into a [`DataTable`].
///
/// Without a schema, a column is numeric iff every non-missing cell parses
/// as a finite number. With a schema, cells of numeric columns that fail to
/// parse become missing markers, and the label column is split out (it must
/// be complete).
pub fn load_csv(path: &Path, schema: Option<&SchemaMap>) -> Result<DataTable, DataError> {
    if !path.exists() {
        return Err(DataError::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    if headers.is_empty() {
        return Err(DataError::EmptyTable);
    }

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => DataError::RaggedRows { row: row_idx + 1 },
            _ => DataError::Csv(e),
        })?;
        if record.len() != headers.len() {
            return Err(DataError::RaggedRows { row: row_idx + 1 });
        }
        for (col, field) in record.iter().enumerate() {
            cells[col].push(if field.is_empty() { None } else { Some(field.to_string()) });
        }
    }
    let n_rows = cells[0].len();
    if n_rows == 0 {
        return Err(DataError::EmptyTable);
    }

    let mut columns = Vec::new();
    let mut label: Option<(String, Vec<String>)> = None;
    for (name, raw) in headers.into_iter().zip(cells) {
        let declared = schema.and_then(|s| s.get(&name).copied());
        match declared {
            Some(SchemaKind::Label) => {
                let mut values = Vec::with_capacity(raw.len());
                for (row, cell) in raw.into_iter().enumerate() {
                    match cell {
                        Some(v) => values.push(v),
                        None => return Err(DataError::MissingLabel { row: row + 1 }),
                    }
                }
                label = Some((name, values));
            }
            Some(SchemaKind::Numeric) => {
                let values = raw.into_iter().map(|c| c.and_then(|s| parse_finite(&s))).collect();
                columns.push(Column { name, values: ColumnValues::Numeric(values) });
            }
            Some(SchemaKind::Categorical) => {
                columns.push(Column { name, values: ColumnValues::Categorical(raw) });
            }
            None => {
                // Infer: numeric iff every non-missing cell parses.
                let all_numeric = raw
                    .iter()
                    .flatten()
                    .all(|s| parse_finite(s).is_some());
                if all_numeric {
                    let values = raw.into_iter().map(|c| c.and_then(|s| parse_finite(&s))).collect();
                    columns.push(Column { name, values: ColumnValues::Numeric(values) });
                } else {
                    columns.push(Column { name, values: ColumnValues::Categorical(raw) });
                }
            }
        }
    }
    if columns.is_empty() {
        // A lone label column is not a usable feature table.
        return Err(DataError::EmptyTable);
    }
    DataTable::new(columns, label)
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}
