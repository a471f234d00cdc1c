//! Synthetic minority oversampling: new minority points are convex
//! combinations of a minority point and one of its k nearest same-class
//! neighbors (Euclidean), until every class reaches the majority count.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::rng::{stream_rng, Stream};

use super::DataError;

/// Oversample every minority class up to the majority count. Original rows
/// pass through unchanged (and first); synthetic rows are appended with
/// their minority label. The effective neighbor count is
/// `min(k_neighbors, class_size - 1)`.
pub fn smote(
    features: &Tensor,
    labels: &[String],
    k_neighbors: usize,
    seed: u64,
) -> Result<(Tensor, Vec<String>), DataError> {
    if labels.is_empty() {
        return Err(DataError::NoLabels);
    }
    let n = features.n_rows();
    if labels.len() != n {
        return Err(DataError::LengthMismatch { left: n, right: labels.len() });
    }
    let dim = features.n_cols();

    // Class -> row indices, in deterministic (sorted) class order.
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let majority = by_class.values().map(|v| v.len()).max().unwrap_or(0);

    let mut rng = stream_rng(seed, Stream::Smote);
    let mut out_values = features.values().to_vec();
    let mut out_labels = labels.to_vec();

    for (class, rows) in &by_class {
        let count = rows.len();
        if count == majority {
            continue;
        }
        if count < 2 {
            return Err(DataError::ClassTooSmall((*class).to_string()));
        }
        let k = k_neighbors.max(1).min(count - 1);
        // Neighbor lists within the class, by distance then index.
        let neighbors: Vec<Vec<usize>> = rows
            .iter()
            .map(|&p| {
                let mut others: Vec<(f64, usize)> = rows
                    .iter()
                    .filter(|&&q| q != p)
                    .map(|&q| (sq_distance(features.row(p), features.row(q)), q))
                    .collect();
                others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                others.into_iter().take(k).map(|(_, q)| q).collect()
            })
            .collect();

        for _ in 0..majority - count {
            let pi = rng.random_range(0..count);
            let p = features.row(rows[pi]);
            let q = features.row(neighbors[pi][rng.random_range(0..k)]);
            let gap: f64 = rng.random();
            out_values.extend(p.iter().zip(q).map(|(a, b)| a + gap * (b - a)));
            out_labels.push((*class).to_string());
        }
    }

    let total = out_labels.len();
    let features = Tensor::new(&[total, dim], out_values).expect("interpolations stay finite");
    Ok((features, out_labels))
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
