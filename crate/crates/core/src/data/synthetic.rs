//! Seeded synthetic classification data: isotropic Gaussian blobs.

use crate::rng::{next_standard_normal, stream_rng, Stream};

use super::{Column, ColumnValues, DataTable};

/// Isotropic Gaussian class blobs. Class means are drawn once from
/// `N(0, spread² I)`; each row is its class mean plus unit-variance noise
/// scaled by `within_std`. Classes are assigned round-robin, so counts
/// differ by at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub n_rows: usize,
    pub n_dims: usize,
    pub n_classes: usize,
    /// Std of the class-mean distribution, per dimension.
    pub spread: f64,
    /// Within-class std, per dimension.
    pub within_std: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig { n_rows: 600, n_dims: 16, n_classes: 3, spread: 1.0, within_std: 1.0 }
    }
}

/// Generate a labeled blob table. Feature columns are `f00..`, the label
/// column is `label` with classes `c0..`.
pub fn make_blobs(config: &BlobConfig, seed: u64) -> DataTable {
    assert!(config.n_rows >= 1 && config.n_dims >= 1 && config.n_classes >= 1);
    let mut rng = stream_rng(seed, Stream::DataGen);

    let mut means = vec![0.0; config.n_classes * config.n_dims];
    for m in means.iter_mut() {
        *m = config.spread * next_standard_normal(&mut rng);
    }

    let mut features = vec![vec![0.0; config.n_rows]; config.n_dims];
    let mut labels = Vec::with_capacity(config.n_rows);
    for row in 0..config.n_rows {
        let class = row % config.n_classes;
        for (d, feature) in features.iter_mut().enumerate() {
            feature[row] = means[class * config.n_dims + d]
                + config.within_std * next_standard_normal(&mut rng);
        }
        labels.push(format!("c{class}"));
    }

    let columns = features
        .into_iter()
        .enumerate()
        .map(|(d, values)| Column {
            name: format!("f{d:02}"),
            values: ColumnValues::Numeric(values.into_iter().map(Some).collect()),
        })
        .collect();
    DataTable::new(columns, Some(("label".into(), labels))).expect("generator emits a valid table")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_table_shape_and_determinism() {
        let cfg = BlobConfig { n_rows: 30, n_dims: 4, n_classes: 3, ..Default::default() };
        let a = make_blobs(&cfg, 5);
        let b = make_blobs(&cfg, 5);
        assert_eq!(a, b);
        assert_eq!(a.n_rows(), 30);
        assert_eq!(a.columns().len(), 4);
        let labels = a.labels().unwrap();
        for c in ["c0", "c1", "c2"] {
            assert_eq!(labels.iter().filter(|l| *l == c).count(), 10);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = BlobConfig::default();
        assert_ne!(make_blobs(&cfg, 1), make_blobs(&cfg, 2));
    }
}
