//! Tabular ingestion, preprocessing, splitting and augmentation.

mod augment;
mod csv_io;
mod preprocess;
mod smote;
mod split;
mod synthetic;

pub use augment::{make_views, AugmentConfig, SmoteConfig};
pub use csv_io::{load_csv, load_schema, SchemaKind, SchemaMap};
pub use preprocess::{apply_preprocess, fit_preprocess, ColumnStats, PreprocessPlan};
pub use smote::smote;
pub use split::{kfold, split_train_test};
pub use synthetic::{make_blobs, BlobConfig};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("ragged csv: row {row} has a different field count")]
    RaggedRows { row: usize },
    #[error("table has no rows or no columns")]
    EmptyTable,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid fold count {k} for {n} rows")]
    InvalidK { k: usize, n: usize },
    #[error("invalid train fraction {0}; must be in (0, 1)")]
    InvalidFraction(f64),
    #[error("class {0:?} has a single sample and cannot be oversampled")]
    ClassTooSmall(String),
    #[error("operation requires labels but the table has none")]
    NoLabels,
    #[error("label column has a missing entry at row {row}")]
    MissingLabel { row: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid augmentation: {0}")]
    InvalidAugment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv parse: {0}")]
    Csv(#[from] ::csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// One column with explicit missing markers.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnValues {
    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Numeric(v) => v.len(),
            ColumnValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnValues::Numeric(_) => ColumnKind::Numeric,
            ColumnValues::Categorical(_) => ColumnKind::Categorical,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: ColumnValues,
}

/// Mixed-schema dataset: feature columns plus an optional label column.
/// The label column never has missing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    columns: Vec<Column>,
    label_name: Option<String>,
    labels: Option<Vec<String>>,
    n_rows: usize,
}

impl DataTable {
    pub fn new(
        columns: Vec<Column>,
        label: Option<(String, Vec<String>)>,
    ) -> Result<Self, DataError> {
        if columns.is_empty() {
            return Err(DataError::EmptyTable);
        }
        let n_rows = columns[0].values.len();
        if n_rows == 0 {
            return Err(DataError::EmptyTable);
        }
        for c in &columns {
            if c.values.len() != n_rows {
                return Err(DataError::LengthMismatch { left: n_rows, right: c.values.len() });
            }
        }
        let (label_name, labels) = match label {
            Some((name, values)) => {
                if values.len() != n_rows {
                    return Err(DataError::LengthMismatch { left: n_rows, right: values.len() });
                }
                (Some(name), Some(values))
            }
            None => (None, None),
        };
        Ok(DataTable { columns, label_name, labels, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn label_name(&self) -> Option<&str> {
        self.label_name.as_deref()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Subset of rows, in the order given.
    pub fn select_rows(&self, indices: &[usize]) -> DataTable {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                values: match &c.values {
                    ColumnValues::Numeric(v) => {
                        ColumnValues::Numeric(indices.iter().map(|&i| v[i]).collect())
                    }
                    ColumnValues::Categorical(v) => {
                        ColumnValues::Categorical(indices.iter().map(|&i| v[i].clone()).collect())
                    }
                },
            })
            .collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i].clone()).collect());
        DataTable {
            columns,
            label_name: self.label_name.clone(),
            labels,
            n_rows: indices.len(),
        }
    }
}
