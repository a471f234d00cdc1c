//! Seeded train/test splitting and k-fold assignment.

use crate::rng::{shuffled_indices, stream_rng, Stream};

use super::{DataError, DataTable};

/// Shuffle rows with the split stream of `seed` and cut at
/// `floor(fraction * n)`. The two tables are disjoint and exhaustive.
pub fn split_train_test(
    table: &DataTable,
    train_fraction: f64,
    seed: u64,
) -> Result<(DataTable, DataTable), DataError> {
    let n = table.n_rows();
    if n < 2 {
        return Err(DataError::TooFewRows { needed: 2, got: n });
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    let mut rng = stream_rng(seed, Stream::Split);
    let order = shuffled_indices(&mut rng, n);
    let train_n = (train_fraction * n as f64).floor() as usize;
    let train = table.select_rows(&order[..train_n]);
    let test = table.select_rows(&order[train_n..]);
    Ok((train, test))
}

/// Seeded k-fold assignment over row indices. Fold sizes differ by at most
/// one; every row lands in exactly one validation fold.
pub fn kfold(
    table: &DataTable,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, DataError> {
    let n = table.n_rows();
    if k < 2 || k > n {
        return Err(DataError::InvalidK { k, n });
    }
    let mut rng = stream_rng(seed, Stream::Split);
    let order = shuffled_indices(&mut rng, n);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let val: Vec<usize> = order[start..start + size].to_vec();
        let train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        folds.push((train, val));
        start += size;
    }
    Ok(folds)
}
