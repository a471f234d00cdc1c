//! Z-score standardization, one-hot encoding and imputation, fitted on
//! training rows only and applied as a pure function.

use crate::autodiff::Tensor;

use super::{ColumnValues, DataError, DataTable};

/// Fitted statistics for one column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnStats {
    /// Mean and population std over non-missing training entries; the std
    /// is floored at 1e-12 so constant columns map to zero. Missing cells
    /// impute to the mean.
    Numeric { mean: f64, std: f64 },
    /// Sorted category list and mode from training rows. Missing cells
    /// impute to the mode; categories unseen at fit time encode to an
    /// all-zero block.
    Categorical { categories: Vec<String>, mode: Option<String> },
}

/// Per-column transform, fitted only on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessPlan {
    pub names: Vec<String>,
    pub stats: Vec<ColumnStats>,
    pub width: usize,
}

const STD_FLOOR: f64 = 1e-12;

/// Fit means/stds, category lists and imputation values on training rows.
pub fn fit_preprocess(train: &DataTable) -> Result<PreprocessPlan, DataError> {
    if train.n_rows() == 0 {
        return Err(DataError::EmptyTable);
    }
    let mut names = Vec::new();
    let mut stats = Vec::new();
    let mut width = 0;
    for column in train.columns() {
        names.push(column.name.clone());
        match &column.values {
            ColumnValues::Numeric(values) => {
                let present: Vec<f64> = values.iter().flatten().copied().collect();
                let (mean, std) = if present.is_empty() {
                    (0.0, STD_FLOOR)
                } else {
                    let n = present.len() as f64;
                    let mean = present.iter().sum::<f64>() / n;
                    let var = present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    (mean, var.sqrt().max(STD_FLOOR))
                };
                stats.push(ColumnStats::Numeric { mean, std });
                width += 1;
            }
            ColumnValues::Categorical(values) => {
                let mut categories: Vec<String> =
                    values.iter().flatten().cloned().collect();
                categories.sort();
                categories.dedup();
                // Mode over non-missing entries; ties go to the
                // lexicographically smallest category.
                let mode = categories
                    .iter()
                    .map(|c| {
                        let count = values.iter().flatten().filter(|v| *v == c).count();
                        (c.clone(), count)
                    })
                    .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                    .map(|(c, _)| c);
                width += categories.len();
                stats.push(ColumnStats::Categorical { categories, mode });
            }
        }
    }
    Ok(PreprocessPlan { names, stats, width })
}

/// Impute, standardize and one-hot encode a table under a fitted plan.
/// Column order is the plan's; no statistic is recomputed from the input.
pub fn apply_preprocess(plan: &PreprocessPlan, table: &DataTable) -> Result<Tensor, DataError> {
    if table.columns().len() != plan.names.len() {
        return Err(DataError::SchemaMismatch(format!(
            "plan has {} columns, table has {}",
            plan.names.len(),
            table.columns().len()
        )));
    }
    for (column, (name, stat)) in table.columns().iter().zip(plan.names.iter().zip(&plan.stats)) {
        if &column.name != name {
            return Err(DataError::SchemaMismatch(format!(
                "column {:?} does not match plan column {:?}",
                column.name, name
            )));
        }
        let kinds_match = matches!(
            (&column.values, stat),
            (ColumnValues::Numeric(_), ColumnStats::Numeric { .. })
                | (ColumnValues::Categorical(_), ColumnStats::Categorical { .. })
        );
        if !kinds_match {
            return Err(DataError::SchemaMismatch(format!(
                "column {:?} kind does not match the plan",
                column.name
            )));
        }
    }

    let n = table.n_rows();
    let mut out = vec![0.0; n * plan.width];
    let mut offset = 0;
    for (column, stat) in table.columns().iter().zip(&plan.stats) {
        match (&column.values, stat) {
            (ColumnValues::Numeric(values), ColumnStats::Numeric { mean, std }) => {
                for (row, v) in values.iter().enumerate() {
                    let raw = v.unwrap_or(*mean);
                    out[row * plan.width + offset] = (raw - mean) / std;
                }
                offset += 1;
            }
            (ColumnValues::Categorical(values), ColumnStats::Categorical { categories, mode }) => {
                for (row, v) in values.iter().enumerate() {
                    let effective = v.as_ref().or(mode.as_ref());
                    if let Some(value) = effective {
                        if let Ok(pos) = categories.binary_search(value) {
                            out[row * plan.width + offset + pos] = 1.0;
                        }
                        // unseen category: leave the block all zero
                    }
                }
                offset += categories.len();
            }
            _ => unreachable!("kinds validated above"),
        }
    }
    Ok(Tensor::new(&[n, plan.width], out).expect("standardized values are finite"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;

    fn numeric_table(values: Vec<Option<f64>>) -> DataTable {
        DataTable::new(
            vec![Column { name: "x".into(), values: ColumnValues::Numeric(values) }],
            None,
        )
        .unwrap()
    }

    #[test]
    fn fit_uses_population_std() {
        let table = numeric_table(vec![Some(1.0), Some(2.0), Some(3.0)]);
        let plan = fit_preprocess(&table).unwrap();
        let ColumnStats::Numeric { mean, std } = &plan.stats[0] else { panic!() };
        assert!((mean - 2.0).abs() < 1e-15);
        // population std of {1,2,3} = sqrt(2/3)
        assert!((std - (2.0_f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((std - 0.816497).abs() < 1e-6);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let table = numeric_table(vec![Some(5.0), Some(5.0)]);
        let plan = fit_preprocess(&table).unwrap();
        let x = apply_preprocess(&plan, &table).unwrap();
        assert_eq!(x.values(), &[0.0, 0.0]);
    }

    #[test]
    fn categorical_fit_sorts_categories_and_finds_mode() {
        let table = DataTable::new(
            vec![Column {
                name: "c".into(),
                values: ColumnValues::Categorical(vec![
                    Some("b".into()),
                    Some("a".into()),
                    Some("a".into()),
                ]),
            }],
            None,
        )
        .unwrap();
        let plan = fit_preprocess(&table).unwrap();
        let ColumnStats::Categorical { categories, mode } = &plan.stats[0] else { panic!() };
        assert_eq!(categories, &["a".to_string(), "b".to_string()]);
        assert_eq!(mode.as_deref(), Some("a"));
    }

    #[test]
    fn one_hot_encoding_and_unseen_categories() {
        let train = DataTable::new(
            vec![Column {
                name: "c".into(),
                values: ColumnValues::Categorical(vec![
                    Some("a".into()),
                    Some("b".into()),
                    Some("c".into()),
                ]),
            }],
            None,
        )
        .unwrap();
        let plan = fit_preprocess(&train).unwrap();
        let test = DataTable::new(
            vec![Column {
                name: "c".into(),
                values: ColumnValues::Categorical(vec![Some("b".into()), Some("d".into())]),
            }],
            None,
        )
        .unwrap();
        let x = apply_preprocess(&plan, &test).unwrap();
        assert_eq!(x.shape(), &[2, 3]);
        assert_eq!(x.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(x.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_numeric_imputes_to_mean_then_standardizes_to_zero() {
        let train = numeric_table(vec![Some(1.0), Some(3.0)]);
        let plan = fit_preprocess(&train).unwrap();
        let test = numeric_table(vec![None]);
        let x = apply_preprocess(&plan, &test).unwrap();
        assert_eq!(x.values(), &[0.0]);
    }

    #[test]
    fn train_columns_standardize_to_zero_mean_unit_std() {
        let table = numeric_table(vec![Some(1.0), Some(4.0), Some(7.0), Some(-2.0)]);
        let plan = fit_preprocess(&table).unwrap();
        let x = apply_preprocess(&plan, &table).unwrap();
        let n = x.n_rows() as f64;
        let mean: f64 = x.values().iter().sum::<f64>() / n;
        let var: f64 = x.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn apply_rejects_schema_mismatch() {
        let train = numeric_table(vec![Some(1.0)]);
        let plan = fit_preprocess(&train).unwrap();
        let other = DataTable::new(
            vec![Column {
                name: "y".into(),
                values: ColumnValues::Numeric(vec![Some(1.0)]),
            }],
            None,
        )
        .unwrap();
        assert!(matches!(
            apply_preprocess(&plan, &other),
            Err(DataError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn all_missing_numeric_column_becomes_zeros() {
        let table = numeric_table(vec![None, None]);
        let plan = fit_preprocess(&table).unwrap();
        let x = apply_preprocess(&plan, &table).unwrap();
        assert_eq!(x.values(), &[0.0, 0.0]);
    }
}
